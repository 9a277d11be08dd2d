//! Scenario files, the discrete-event loop that plays them against a desk,
//! checkpoints evaluated over the exported logs, and the shipped case study.

mod case_study;
mod checkpoint;
mod decision_log;
mod runner;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::amm::{Pool, SwapSide};
use crate::desk::{DeskError, DeskSetup};
use crate::fabric::{CanonicalTimestamp, FabricError};
use crate::governance::EscalationPayload;
use crate::policy::{Ladder, LiveFlags, RoleConstitution, TraderPolicyConfig, TraderPolicyState, WalletId};
use crate::runtime::TierHealth;

pub use case_study::{
    case_study_template, freeze_scenario, replay_case_study, shipped_scenario, split_phases,
    CaseStudyReport, SHIPPED_SCENARIOS,
};
pub use checkpoint::{
    evaluate_checkpoint, evidence_document, Assertion, AssertionResult, Checkpoint, CheckpointReport,
    Comparator,
};
pub use decision_log::{decision_log_csv, decision_rows, DecisionRow, DECISION_LOG_HEADER};
pub use runner::{
    run_batch, Command, RunEvent, RunEventKind, RunMode, RunOutput, RunSnapshot, RunStatus,
    ScenarioRunner, StepStatus,
};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("timeline event {index} at {at} precedes the event before it")]
    Unsorted { index: usize, at: CanonicalTimestamp },
    #[error("timeline event {index} lies outside the scenario clock")]
    OutOfRange { index: usize },
    #[error("mark label {0:?} is used twice")]
    DuplicateMark(String),
    #[error("escalation ref {0:?} is declared twice")]
    DuplicateRef(String),
    #[error("timeline event {index} references unknown escalation {reference:?}")]
    UnknownEscalation { index: usize, reference: String },
    #[error("checkpoint {checkpoint:?} is attached to unknown mark {mark:?}")]
    UnknownMark { checkpoint: String, mark: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("command rejected: {0}")]
    Command(String),
    #[error(transparent)]
    Desk(#[from] DeskError),
    #[error(transparent)]
    Audit(#[from] FabricError),
    #[error("scenario file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub name: String,
    pub seed: u64,
    pub sol_usd: Decimal,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioClock {
    pub start_at: CanonicalTimestamp,
    /// Inclusive: events scheduled exactly at `end_at` are processed.
    pub end_at: CanonicalTimestamp,
    pub tick_seconds: u64,
}

/// Optional runtime runs interleaved with the policy ticks. Each run writes
/// one EMISSION entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSchedule {
    pub every_seconds: u64,
    #[serde(default)]
    pub remote_failure_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScenarioEvent {
    ExternalTrade {
        side: SwapSide,
        amount: Decimal,
    },
    /// Generator-only form: trades whatever amount moves the spot price to
    /// the target. [`freeze_scenario`] rewrites these as `EXTERNAL_TRADE`.
    ExternalTradeToPrice {
        target_price_usd: Decimal,
    },
    /// Files a TOP_UP escalation; the funds arrive when it is approved.
    TopUp {
        #[serde(rename = "ref")]
        reference: String,
        sol: Decimal,
        requested_by: String,
    },
    EscalationRequest {
        #[serde(rename = "ref")]
        reference: String,
        request: EscalationPayload,
        requested_by: String,
    },
    Approval {
        escalation_ref: String,
        approver: String,
        rationale: String,
    },
    Denial {
        escalation_ref: String,
        approver: String,
        rationale: String,
    },
    TierHealth(TierHealth),
    Mark {
        label: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub at: CanonicalTimestamp,
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub metadata: ScenarioMetadata,
    pub clock: ScenarioClock,
    pub pool: Pool,
    pub policy: TraderPolicyConfig,
    pub ladder: Ladder,
    pub constitution: RoleConstitution,
    pub flags: LiveFlags,
    pub trader_wallet: WalletId,
    pub initial_wallet_sol: Decimal,
    pub engine_identity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<TraderPolicyState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeSchedule>,
    pub timeline: Vec<TimedEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<Checkpoint>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("scenario serialises");
        text.push('\n');
        text
    }

    pub fn desk_setup(&self) -> DeskSetup {
        DeskSetup {
            pool: self.pool.clone(),
            sol_usd: self.metadata.sol_usd,
            policy: self.policy.clone(),
            ladder: self.ladder.clone(),
            constitution: self.constitution.clone(),
            flags: self.flags,
            trader_wallet: self.trader_wallet.clone(),
            initial_wallet_sol: self.initial_wallet_sol,
            engine_identity: self.engine_identity.clone(),
            initial_state: self.initial_state.clone(),
        }
    }

    /// Static checks: ordering, range, unique marks, and every approval or
    /// denial pointing at an escalation declared earlier in the timeline.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.clock.end_at < self.clock.start_at {
            return Err(ScenarioError::Invalid("end_at precedes start_at".into()));
        }
        if self.clock.tick_seconds == 0 {
            return Err(ScenarioError::Invalid("tick_seconds must be positive".into()));
        }
        if self.metadata.sol_usd <= Decimal::ZERO {
            return Err(ScenarioError::Invalid("sol_usd must be positive".into()));
        }
        if let Some(rt) = &self.runtime {
            if rt.every_seconds == 0 || !(0.0..=1.0).contains(&rt.remote_failure_probability) {
                return Err(ScenarioError::Invalid("runtime schedule is out of range".into()));
            }
        }
        self.pool.validate().map_err(DeskError::from)?;
        self.policy.validate().map_err(DeskError::from)?;

        let mut marks = BTreeSet::new();
        let mut refs = HashSet::new();
        let mut previous = self.clock.start_at;
        for (index, TimedEvent { at, event }) in self.timeline.iter().enumerate() {
            if *at < previous {
                return Err(ScenarioError::Unsorted { index, at: *at });
            }
            if *at > self.clock.end_at {
                return Err(ScenarioError::OutOfRange { index });
            }
            previous = *at;
            match event {
                ScenarioEvent::Mark { label } if !marks.insert(label.clone()) => {
                    return Err(ScenarioError::DuplicateMark(label.clone()));
                }
                ScenarioEvent::TopUp { reference, .. } | ScenarioEvent::EscalationRequest { reference, .. }
                    if !refs.insert(reference.clone()) =>
                {
                    return Err(ScenarioError::DuplicateRef(reference.clone()));
                }
                ScenarioEvent::EscalationRequest { request, .. } => request
                    .validate()
                    .map_err(|e| ScenarioError::Invalid(format!("event {index}: {e}")))?,
                ScenarioEvent::TopUp { sol, .. } if *sol <= Decimal::ZERO => {
                    return Err(ScenarioError::Invalid(format!("event {index}: top-up must be positive")));
                }
                ScenarioEvent::ExternalTrade { amount, .. } if *amount < Decimal::ZERO => {
                    return Err(ScenarioError::Invalid(format!("event {index}: negative trade amount")));
                }
                ScenarioEvent::Approval { escalation_ref, .. } | ScenarioEvent::Denial { escalation_ref, .. }
                    if !refs.contains(escalation_ref) =>
                {
                    return Err(ScenarioError::UnknownEscalation { index, reference: escalation_ref.clone() });
                }
                _ => {}
            }
        }
        for cp in &self.checkpoints {
            if let Some(mark) = &cp.at_mark {
                if !marks.contains(mark) {
                    return Err(ScenarioError::UnknownMark { checkpoint: cp.label.clone(), mark: mark.clone() });
                }
            }
        }
        Ok(())
    }
}
