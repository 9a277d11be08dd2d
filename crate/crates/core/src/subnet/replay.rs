use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::MinerOutput;
use crate::fabric::{window_of, CanonicalTimestamp, FabricError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReplayRejection {
    #[error("forecast emitted in window {emitted} submitted in window {now}")]
    OutOfWindow { emitted: u64, now: u64 },
    #[error("miner already submitted in window {0}")]
    AlreadySubmitted(u64),
}

/// Accepts each miner at most once per window, and only while the window
/// the forecast was emitted in is still current. Identical forecasts from
/// distinct miners in the same window are accepted.
#[derive(Debug, Clone)]
pub struct ReplayGuard {
    width_seconds: i64,
    seen: HashSet<(String, u64)>,
}

impl ReplayGuard {
    pub fn new(width_seconds: i64) -> Result<Self, FabricError> {
        window_of(CanonicalTimestamp::from_secs(0), width_seconds)?;
        Ok(Self { width_seconds, seen: HashSet::new() })
    }

    pub fn submit(&mut self, m: &MinerOutput, now: CanonicalTimestamp) -> Result<(), ReplayRejection> {
        let emitted = window_of(m.emitted_at, self.width_seconds).expect("width checked").index;
        let current = window_of(now, self.width_seconds).expect("width checked").index;
        if emitted != current {
            return Err(ReplayRejection::OutOfWindow { emitted, now: current });
        }
        if !self.seen.insert((m.miner_id.clone(), current)) {
            return Err(ReplayRejection::AlreadySubmitted(current));
        }
        Ok(())
    }
}
