use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{Mode, TraderPolicyConfig, TraderPolicyState};
use crate::fabric::CanonicalTimestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricePoint {
    pub at: CanonicalTimestamp,
    pub price_usd: Decimal,
}

#[derive(Debug, Clone, Copy)]
pub struct MarketView<'a> {
    pub spot_price_usd: Decimal,
    pub liquidity_usd: Decimal,
    /// Observed prices, oldest first. Must cover the trailing stop-loss
    /// window for the trip check to be meaningful.
    pub price_history: &'a [PricePoint],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HoldReason {
    Paused,
    Cooldown,
    CapBound,
    AboveTier,
    InsufficientFunds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    FireBuy,
    Hold(HoldReason),
    TripStoploss,
}

/// One tick of the trader policy.
///
/// Checks run in a fixed order: paused, stop-loss (which pre-empts any buy),
/// cooldown or an in-flight program, daily cap, wallet balance, and finally
/// whether price sits below the bottom tier.
pub fn evaluate_tick(
    state: &TraderPolicyState,
    config: &TraderPolicyConfig,
    market: &MarketView<'_>,
    clock: CanonicalTimestamp,
) -> Decision {
    if state.mode != Mode::Live {
        return Decision::Hold(HoldReason::Paused);
    }
    if state.stoploss_armed && stoploss_check(market.price_history, clock, config) {
        return Decision::TripStoploss;
    }
    if state.buy_in_flight {
        return Decision::Hold(HoldReason::Cooldown);
    }
    if let Some(done) = state.last_buy_completed_at {
        if clock.since(done) < config.cooldown_seconds {
            return Decision::Hold(HoldReason::Cooldown);
        }
    }
    if state.daily_spend(clock) + config.buy_size > state.daily_cap_sol {
        return Decision::Hold(HoldReason::CapBound);
    }
    if state.wallet_balance_sol < config.buy_size {
        return Decision::Hold(HoldReason::InsufficientFunds);
    }
    if market.spot_price_usd >= state.ladder.bottom() {
        return Decision::Hold(HoldReason::AboveTier);
    }
    Decision::FireBuy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledSlice {
    pub fire_at: CanonicalTimestamp,
    pub amount: Decimal,
}

/// Equal spacing of `slice_window / slice_count`, first slice immediately.
pub fn slice_schedule(clock: CanonicalTimestamp, config: &TraderPolicyConfig) -> Vec<ScheduledSlice> {
    let spacing = config.slice_window_seconds / u64::from(config.slice_count.max(1));
    (0..u64::from(config.slice_count))
        .map(|i| ScheduledSlice { fire_at: clock + i * spacing, amount: config.slice_size })
        .collect()
}

/// Raises the bottom tier once per newly crossed spend threshold (inclusive),
/// compounding when a single buy crosses several.
pub fn apply_ratchet(state: &TraderPolicyState, config: &TraderPolicyConfig) -> TraderPolicyState {
    let mut next = state.clone();
    let crossed = config
        .ratchet_spend_thresholds
        .iter()
        .filter(|t| **t <= state.lifetime_spend_sol)
        .count() as u32;
    let factor = config.ratchet_factor();
    while next.ratchet_level < crossed {
        next.ladder.scale_bottom(factor);
        next.ratchet_level += 1;
    }
    next
}

/// True when the drop from the trailing-window maximum to the latest price
/// at or before `clock` reaches `stoploss_drop_fraction` (inclusive).
pub fn stoploss_check(history: &[PricePoint], clock: CanonicalTimestamp, config: &TraderPolicyConfig) -> bool {
    let window_start = clock.saturating_sub(config.stoploss_window_seconds);
    let in_window = history.iter().filter(|p| p.at >= window_start && p.at <= clock);
    let mut peak: Option<Decimal> = None;
    let mut current: Option<Decimal> = None;
    for p in in_window {
        peak = Some(peak.map_or(p.price_usd, |m| m.max(p.price_usd)));
        current = Some(p.price_usd);
    }
    match (peak, current) {
        (Some(peak), Some(current)) if peak > Decimal::ZERO => {
            (peak - current) / peak >= config.stoploss_drop_fraction
        }
        _ => false,
    }
}
