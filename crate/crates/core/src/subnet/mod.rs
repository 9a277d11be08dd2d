//! The verification subnet: event resolution, the three-part validator
//! loss, clipped stake-weighted allocation, a seeded epoch simulator, the
//! killable-uplift switch and replay rejection.
//!
//! Probabilities and losses are `f64`; nothing here touches money.

mod loss;
mod replay;
mod resolver;
mod sim;
mod uplift;
mod yuma;

pub use loss::{
    brier, calibration_gap, inconsistency, validator_loss, CalibrationGap, LossBreakdown,
    MinerOutput, ScoringConfig,
};
pub use replay::{ReplayGuard, ReplayRejection};
pub use resolver::{
    resolve_event, Anomaly, ChainTrace, EventClass, EventClassConfig, Resolution, TracePoint,
};
pub use sim::{
    run_epochs, ChainTraceGenerator, Coalition, EpochTelemetry, MinerProfile, SimConfig,
    SimReport, Strategy, SyntheticTraces,
};
pub use uplift::{uplift_decision, PredictionSource, ServedPrediction, UpliftState, UpliftSwitch};
pub use yuma::{consensus_scores, yuma_allocate, Metagraph};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SubnetError {
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("paired outputs must share one context, found {0:?} and {1:?}")]
    MixedContexts(String, String),
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("metagraph has no validators or no miners")]
    EmptyMetagraph,
    #[error("stake must be positive, got {0}")]
    NonPositiveStake(f64),
    #[error("score matrix is {rows}x{cols}, expected {validators}x{miners}")]
    ShapeMismatch { rows: usize, cols: usize, validators: usize, miners: usize },
}

fn check_unit(x: f64) -> Result<f64, SubnetError> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(SubnetError::ProbabilityOutOfRange(x))
    }
}
