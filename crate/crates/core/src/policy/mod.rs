//! The Trader-role engine: tier ladder, ratchet, cooldown, slicing, caps,
//! the stop-loss circuit and the role constitution.

mod config;
mod constitution;
mod engine;
mod state;

pub use config::{Ladder, TraderPolicyConfig};
pub use constitution::{
    check_constitution, ActionKind, GovernanceView, LiveFlags, ProposedAction, RoleConstitution,
    RuleId, Verdict, WalletId,
};
pub use engine::{
    apply_ratchet, evaluate_tick, slice_schedule, stoploss_check, Decision, HoldReason,
    MarketView, PricePoint, ScheduledSlice,
};
pub use state::{date_key, Mode, TraderPolicyState};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("invalid trader policy config: {0}")]
    InvalidConfig(String),
    #[error("ladder tiers must be positive and strictly ascending")]
    InvalidLadder,
}
