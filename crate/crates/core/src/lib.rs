//! Desk-scale risk simulator: a constant-product pool, a policy-gated trader
//! engine behind a human approval gate, a subnet scoring mechanism, and a
//! windowed calibration evaluator.

pub mod amm;
pub mod fabric;
pub mod governance;
pub mod policy;
pub mod desk;
pub mod subnet;
pub mod calibration;
pub mod sentiment;
pub mod runtime;
pub mod scenario;
