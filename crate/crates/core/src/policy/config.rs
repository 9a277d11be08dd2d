use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::PolicyError;

fn dec(s: &str) -> Decimal {
    Decimal::from_str(s).expect("literal decimal")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraderPolicyConfig {
    pub buy_size: Decimal,
    pub slice_count: u32,
    pub slice_size: Decimal,
    pub slice_window_seconds: u64,
    pub cooldown_seconds: u64,
    /// Cap in force when the engine is constructed; governance changes it.
    pub daily_cap_sol: Decimal,
    pub stoploss_drop_fraction: Decimal,
    pub stoploss_window_seconds: u64,
    pub ratchet_step_bps: u32,
    pub ratchet_spend_thresholds: Vec<Decimal>,
}

impl Default for TraderPolicyConfig {
    fn default() -> Self {
        Self {
            buy_size: dec("0.10"),
            slice_count: 5,
            slice_size: dec("0.02"),
            slice_window_seconds: 150,
            cooldown_seconds: 600,
            daily_cap_sol: dec("1.0"),
            stoploss_drop_fraction: dec("0.30"),
            stoploss_window_seconds: 600,
            ratchet_step_bps: 50,
            ratchet_spend_thresholds: vec![dec("2.0"), dec("4.0"), dec("6.0")],
        }
    }
}

impl TraderPolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: &str| Err(PolicyError::InvalidConfig(msg.to_string()));
        if self.slice_count == 0 {
            return bad("slice_count must be positive");
        }
        if self.slice_size * Decimal::from(self.slice_count) != self.buy_size {
            return bad("slice_count x slice_size must equal buy_size");
        }
        if self.buy_size <= Decimal::ZERO || self.daily_cap_sol <= Decimal::ZERO {
            return bad("buy_size and daily_cap_sol must be positive");
        }
        if self.slice_window_seconds == 0 || self.cooldown_seconds == 0 || self.stoploss_window_seconds == 0 {
            return bad("windows must be positive");
        }
        if self.stoploss_drop_fraction <= Decimal::ZERO || self.stoploss_drop_fraction >= Decimal::ONE {
            return bad("stoploss_drop_fraction must lie in (0, 1)");
        }
        if self.ratchet_spend_thresholds.iter().any(|t| *t <= Decimal::ZERO)
            || self.ratchet_spend_thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("ratchet thresholds must be positive and strictly increasing");
        }
        Ok(())
    }

    /// Multiplier applied to the bottom tier per ratchet step.
    pub fn ratchet_factor(&self) -> Decimal {
        Decimal::ONE + Decimal::from(self.ratchet_step_bps) / Decimal::from(10_000)
    }
}

/// Four ascending USD trigger prices. Only the bottom tier fires buys; the
/// upper tiers are carried and reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[Decimal; 4]", into = "[Decimal; 4]")]
pub struct Ladder {
    tier_prices: [Decimal; 4],
}

impl Ladder {
    pub fn new(tier_prices: [Decimal; 4]) -> Result<Self, PolicyError> {
        if tier_prices[0] <= Decimal::ZERO || tier_prices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PolicyError::InvalidLadder);
        }
        Ok(Self { tier_prices })
    }

    pub fn bottom(&self) -> Decimal {
        self.tier_prices[0]
    }

    pub fn tiers(&self) -> &[Decimal; 4] {
        &self.tier_prices
    }

    pub(crate) fn scale_bottom(&mut self, factor: Decimal) {
        self.tier_prices[0] *= factor;
    }
}

impl TryFrom<[Decimal; 4]> for Ladder {
    type Error = PolicyError;
    fn try_from(v: [Decimal; 4]) -> Result<Self, Self::Error> {
        Ladder::new(v)
    }
}

impl From<Ladder> for [Decimal; 4] {
    fn from(l: Ladder) -> Self {
        l.tier_prices
    }
}
