use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{Ladder, TraderPolicyConfig};
use crate::fabric::CanonicalTimestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Paused,
    Live,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Paused => "PAUSED",
            Mode::Live => "LIVE",
        }
    }
}

/// Mutable state of the trader engine. Changes to mode, cap, wallet top-ups
/// and the stop-loss arm only ever come from governance approvals or from a
/// stop-loss trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraderPolicyState {
    pub mode: Mode,
    pub ladder: Ladder,
    pub ratchet_level: u32,
    pub last_buy_completed_at: Option<CanonicalTimestamp>,
    /// Keyed by UTC date, `YYYY-MM-DD`.
    pub daily_spend_sol: BTreeMap<String, Decimal>,
    pub lifetime_spend_sol: Decimal,
    pub daily_cap_sol: Decimal,
    pub stoploss_armed: bool,
    pub stoploss_tripped_at: Option<CanonicalTimestamp>,
    pub stoploss_baseline_liquidity_usd: Decimal,
    pub wallet_balance_sol: Decimal,
    pub buys_fired: u32,
    pub buys_completed: u32,
    pub buy_in_flight: bool,
}

impl TraderPolicyState {
    /// A fresh engine is paused, armed, and has spent nothing.
    pub fn new(config: &TraderPolicyConfig, ladder: Ladder, wallet_balance_sol: Decimal) -> Self {
        Self {
            mode: Mode::Paused,
            ladder,
            ratchet_level: 0,
            last_buy_completed_at: None,
            daily_spend_sol: BTreeMap::new(),
            lifetime_spend_sol: Decimal::ZERO,
            daily_cap_sol: config.daily_cap_sol,
            stoploss_armed: true,
            stoploss_tripped_at: None,
            stoploss_baseline_liquidity_usd: Decimal::ZERO,
            wallet_balance_sol,
            buys_fired: 0,
            buys_completed: 0,
            buy_in_flight: false,
        }
    }

    pub fn daily_spend(&self, at: CanonicalTimestamp) -> Decimal {
        self.daily_spend_sol
            .get(&date_key(at))
            .copied()
            .unwrap_or(Decimal::ZERO)
    }

    pub fn is_stoploss_paused(&self) -> bool {
        self.mode == Mode::Paused && self.stoploss_tripped_at.is_some()
    }

    /// Books one executed slice against the daily, lifetime and wallet
    /// ledgers.
    pub(crate) fn charge(&mut self, at: CanonicalTimestamp, amount: Decimal) {
        *self.daily_spend_sol.entry(date_key(at)).or_insert(Decimal::ZERO) += amount;
        self.lifetime_spend_sol += amount;
        self.wallet_balance_sol -= amount;
    }
}

pub fn date_key(at: CanonicalTimestamp) -> String {
    at.utc_date().format("%Y-%m-%d").to_string()
}
