use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    resolve_event, validator_loss, yuma_allocate, ChainTrace, EventClassConfig, LossBreakdown,
    Metagraph, MinerOutput, ScoringConfig, SubnetError, TracePoint,
};
use crate::fabric::CanonicalTimestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Strategy {
    /// Right with probability `true_skill`; states `true_skill` as
    /// confidence, blurred by `confidence_noise_sigma`.
    Honest,
    /// Always forecasts the base rate with confidence 0.5.
    ConstantPrior,
    /// Forecasts 0 or 1 with confidence 1.
    Overconfident,
    /// Same marginal accuracy as an honest miner, but answers each paired
    /// query independently.
    AdaptiveGamer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerProfile {
    pub miner_id: String,
    pub true_skill: f64,
    pub confidence_noise_sigma: f64,
    pub strategy: Strategy,
}

/// Validators that report 1.0 for `target_miner` regardless of its loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coalition {
    pub validator_ids: Vec<String>,
    pub target_miner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scoring: ScoringConfig,
    pub events: EventClassConfig,
    pub base_rate: f64,
    pub contexts_per_epoch: usize,
    pub queries_per_context: usize,
    pub epoch_seconds: u64,
    pub coalition: Option<Coalition>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let scoring = ScoringConfig::default();
        Self {
            epoch_seconds: scoring.delta_seconds,
            scoring,
            events: EventClassConfig::default(),
            base_rate: 0.5,
            contexts_per_epoch: 4,
            queries_per_context: 2,
            coalition: None,
        }
    }
}

/// Source of chain traces to resolve against.
pub trait ChainTraceGenerator {
    fn generate(&mut self, t_emit: CanonicalTimestamp, delta_seconds: u64, rng: &mut ChaCha8Rng) -> ChainTrace;
}

/// Flat traces, with a sharp price drop inside the window at `base_rate`.
#[derive(Debug, Clone)]
pub struct SyntheticTraces {
    pub base_rate: f64,
    pub drop_fraction: f64,
}

impl ChainTraceGenerator for SyntheticTraces {
    fn generate(&mut self, t_emit: CanonicalTimestamp, delta_seconds: u64, rng: &mut ChaCha8Rng) -> ChainTrace {
        let mid = t_emit + delta_seconds / 2;
        let mut points = vec![
            TracePoint { at: t_emit, price_usd: 1.0, liquidity_usd: 10_000.0 },
            TracePoint { at: mid, price_usd: 1.0, liquidity_usd: 10_000.0 },
        ];
        if rng.random::<f64>() < self.base_rate {
            points.push(TracePoint { at: mid + 60, price_usd: 1.0 - self.drop_fraction, liquidity_usd: 9_500.0 });
        }
        ChainTrace { points, observed_until: t_emit + delta_seconds, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochTelemetry {
    pub epoch: usize,
    pub miner_id: String,
    pub p: f64,
    pub c: f64,
    pub y: bool,
    pub brier: f64,
    pub inconsistency: f64,
    pub calibration_gap: f64,
    pub total_l: f64,
    /// Reward share paid in this epoch; absent until the lag has elapsed.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub miner_ids: Vec<String>,
    /// Per epoch, the reward weights paid, or `None` before the lag.
    pub weights: Vec<Option<Vec<f64>>>,
    /// Per epoch and miner, loss averaged over that epoch's contexts.
    pub losses: Vec<Vec<LossBreakdown>>,
    pub telemetry: Vec<EpochTelemetry>,
}

impl SimReport {
    pub fn mean_weights(&self) -> Vec<f64> {
        let paid: Vec<&Vec<f64>> = self.weights.iter().flatten().collect();
        let n = paid.len().max(1) as f64;
        (0..self.miner_ids.len()).map(|j| paid.iter().map(|w| w[j]).sum::<f64>() / n).collect()
    }

    pub fn mean_losses(&self) -> Vec<f64> {
        let n = self.losses.len().max(1) as f64;
        (0..self.miner_ids.len()).map(|j| self.losses.iter().map(|l| l[j].total).sum::<f64>() / n).collect()
    }

    pub fn telemetry_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "epoch", "miner_id", "p", "c", "y", "brier", "inconsistency", "calibration_gap", "total_L", "weight",
        ])
        .expect("in-memory write");
        for t in &self.telemetry {
            w.write_record([
                t.epoch.to_string(),
                t.miner_id.clone(),
                format!("{:.6}", t.p),
                format!("{:.6}", t.c),
                u8::from(t.y).to_string(),
                format!("{:.6}", t.brier),
                format!("{:.6}", t.inconsistency),
                format!("{:.6}", t.calibration_gap),
                format!("{:.6}", t.total_l),
                t.weight.map(|w| format!("{w:.6}")).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Probability of the event for a directional call of the given skill.
fn directional_p(skill: f64, y: bool, correct: bool) -> f64 {
    if y == correct {
        skill
    } else {
        1.0 - skill
    }
}

/// Runs `n_epochs` of predict, resolve, score and reward.
///
/// Draws that every miner sees in common (the trace, whether a directional
/// call is right, the confidence noise direction) come from one shared
/// stream, so miners that differ in a single parameter are compared on the
/// same world. Per-miner streams feed only the gamer's independent answers.
pub fn run_epochs(
    profiles: &[MinerProfile],
    metagraph: &Metagraph,
    generator: &mut dyn ChainTraceGenerator,
    n_epochs: usize,
    seed: u64,
    config: &SimConfig,
) -> Result<SimReport, SubnetError> {
    config.scoring.validate()?;
    if metagraph.miners.len() != profiles.len() {
        return Err(SubnetError::ShapeMismatch {
            rows: metagraph.validators.len(),
            cols: profiles.len(),
            validators: metagraph.validators.len(),
            miners: metagraph.miners.len(),
        });
    }
    let mut world = ChaCha8Rng::seed_from_u64(seed);
    let mut miner_rngs: Vec<ChaCha8Rng> = (0..profiles.len())
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect();
    let w = config.scoring.history_window;
    let mut histories: Vec<VecDeque<(f64, bool)>> = vec![VecDeque::with_capacity(w + 1); profiles.len()];
    let mut scores_by_epoch: Vec<Vec<f64>> = Vec::with_capacity(n_epochs);
    let mut report = SimReport {
        miner_ids: profiles.iter().map(|p| p.miner_id.clone()).collect(),
        weights: Vec::with_capacity(n_epochs),
        losses: Vec::with_capacity(n_epochs),
        telemetry: Vec::new(),
    };
    let delta = config.scoring.delta_seconds;
    let queries = config.queries_per_context.max(1);

    for epoch in 0..n_epochs {
        let mut sums = vec![LossBreakdown { brier: 0.0, inconsistency: 0.0, calibration_gap: 0.0, total: 0.0 }; profiles.len()];
        let mut first: Vec<Option<(f64, f64, bool)>> = vec![None; profiles.len()];
        let mut resolved = 0usize;
        for k in 0..config.contexts_per_epoch {
            let t_emit = CanonicalTimestamp::from_secs(epoch as u64 * config.epoch_seconds + k as u64);
            let trace = generator.generate(t_emit, delta, &mut world);
            let shared_u: Vec<f64> = (0..queries).map(|_| world.random()).collect();
            let z: f64 = StandardNormal.sample(&mut world);
            let Some(resolution) = resolve_event(&trace, t_emit, &config.events, delta) else {
                continue;
            };
            resolved += 1;
            let y = resolution.y;
            let context_id = format!("e{epoch}-c{k}");
            for (j, profile) in profiles.iter().enumerate() {
                let skill = profile.true_skill;
                let confidence = (skill + profile.confidence_noise_sigma * z).clamp(0.0, 1.0);
                let outputs: Vec<MinerOutput> = (0..queries)
                    .map(|q| {
                        let (p, c) = match profile.strategy {
                            Strategy::Honest => (directional_p(skill, y, shared_u[0] < skill), confidence),
                            Strategy::ConstantPrior => (config.base_rate, 0.5),
                            Strategy::Overconfident => {
                                let call = if shared_u[0] < skill { y } else { !y };
                                (if call { 1.0 } else { 0.0 }, 1.0)
                            }
                            Strategy::AdaptiveGamer => {
                                let u = if q == 0 { shared_u[0] } else { miner_rngs[j].random() };
                                (directional_p(skill, y, u < skill), confidence)
                            }
                        };
                        MinerOutput {
                            miner_id: profile.miner_id.clone(),
                            p,
                            c,
                            emitted_at: t_emit,
                            context_id: context_id.clone(),
                        }
                    })
                    .collect();
                let m = &outputs[0];
                let history = histories[j].make_contiguous();
                let loss = validator_loss(m, y, &outputs, history, &config.scoring)?;
                sums[j].brier += loss.brier;
                sums[j].inconsistency += loss.inconsistency;
                sums[j].calibration_gap += loss.calibration_gap;
                sums[j].total += loss.total;
                first[j].get_or_insert((m.p, m.c, y));
                histories[j].push_back((m.c, m.calls_event() == y));
                if histories[j].len() > w {
                    histories[j].pop_front();
                }
            }
        }
        let n = resolved.max(1) as f64;
        let epoch_losses: Vec<LossBreakdown> = sums
            .iter()
            .map(|s| LossBreakdown {
                brier: s.brier / n,
                inconsistency: s.inconsistency / n,
                calibration_gap: s.calibration_gap / n,
                total: s.total / n,
            })
            .collect();
        scores_by_epoch.push(epoch_losses.iter().map(|l| (1.0 - l.total).clamp(0.0, 1.0)).collect());

        let weights = match epoch.checked_sub(config.scoring.epoch_lag) {
            Some(source) => Some(yuma_allocate(&score_matrix(&scores_by_epoch[source], metagraph, config), metagraph)?),
            None => None,
        };
        for (j, profile) in profiles.iter().enumerate() {
            let (p, c, y) = first[j].unwrap_or((f64::NAN, f64::NAN, false));
            let l = epoch_losses[j];
            report.telemetry.push(EpochTelemetry {
                epoch,
                miner_id: profile.miner_id.clone(),
                p,
                c,
                y,
                brier: l.brier,
                inconsistency: l.inconsistency,
                calibration_gap: l.calibration_gap,
                total_l: l.total,
                weight: weights.as_ref().map(|w| w[j]),
            });
        }
        report.losses.push(epoch_losses);
        report.weights.push(weights);
    }
    Ok(report)
}

fn score_matrix(scores: &[f64], metagraph: &Metagraph, config: &SimConfig) -> Vec<Vec<f64>> {
    metagraph
        .validators
        .iter()
        .map(|(vid, _)| {
            let mut row = scores.to_vec();
            if let Some(c) = config.coalition.as_ref().filter(|c| c.validator_ids.contains(vid)) {
                if let Some(j) = metagraph.miners.iter().position(|m| *m == c.target_miner) {
                    row[j] = 1.0;
                }
            }
            row
        })
        .collect()
}
