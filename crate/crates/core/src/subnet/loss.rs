use serde::{Deserialize, Serialize};

use super::{check_unit, SubnetError};
use crate::fabric::CanonicalTimestamp;

/// One miner answer: event probability over the scoring window and the
/// miner's stated confidence in its own calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinerOutput {
    pub miner_id: String,
    pub p: f64,
    pub c: f64,
    pub emitted_at: CanonicalTimestamp,
    pub context_id: String,
}

impl MinerOutput {
    /// Directional call: the event is predicted when `p >= 0.5`.
    pub fn calls_event(&self) -> bool {
        self.p >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub delta_seconds: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub history_window: usize,
    pub bin_width: f64,
    pub epoch_lag: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            delta_seconds: 86_400,
            alpha: 0.6,
            beta: 0.2,
            gamma: 0.2,
            history_window: 1_000,
            bin_width: 0.1,
            epoch_lag: 1,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), SubnetError> {
        let bad = |m: &str| Err(SubnetError::InvalidConfig(m.into()));
        if [self.alpha, self.beta, self.gamma].iter().any(|w| *w < 0.0) {
            return bad("weights must be non-negative");
        }
        if (self.alpha + self.beta + self.gamma - 1.0).abs() > 1e-12 {
            return bad("alpha + beta + gamma must equal 1");
        }
        if self.history_window == 0 || self.delta_seconds == 0 {
            return bad("history window and delta must be positive");
        }
        let bins = 1.0 / self.bin_width;
        if !(self.bin_width > 0.0 && self.bin_width <= 1.0) || (bins - bins.round()).abs() > 1e-9 {
            return bad("1 / bin_width must be an integer");
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        (1.0 / self.bin_width).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub brier: f64,
    pub inconsistency: f64,
    pub calibration_gap: f64,
    pub total: f64,
}

pub fn brier(p: f64, y: bool) -> Result<f64, SubnetError> {
    let p = check_unit(p)?;
    let target = if y { 1.0 } else { 0.0 };
    Ok((p - target).powi(2))
}

/// Mean absolute pairwise difference of `p` across outputs that share one
/// context. Fewer than two outputs measure no drift.
pub fn inconsistency(outputs: &[MinerOutput]) -> Result<f64, SubnetError> {
    if let Some(first) = outputs.first() {
        if let Some(other) = outputs.iter().find(|o| o.context_id != first.context_id) {
            return Err(SubnetError::MixedContexts(first.context_id.clone(), other.context_id.clone()));
        }
    }
    for o in outputs {
        check_unit(o.p)?;
    }
    if outputs.len() < 2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in outputs.iter().enumerate() {
        for b in &outputs[i + 1..] {
            sum += (a.p - b.p).abs();
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGap {
    pub value: f64,
    /// No history yet; the value is 0 by convention.
    pub cold_start: bool,
}

/// Mass-weighted expected calibration error over `(confidence, correct)`
/// pairs. A confidence of exactly 1 falls in the last bin.
pub fn calibration_gap(history: &[(f64, bool)], bin_width: f64) -> Result<CalibrationGap, SubnetError> {
    if history.is_empty() {
        return Ok(CalibrationGap { value: 0.0, cold_start: true });
    }
    let bins = (1.0 / bin_width).round() as usize;
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for &(c, correct) in history {
        let c = check_unit(c)?;
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        conf_sum[b] += c;
        count[b] += 1;
        hits[b] += usize::from(correct);
    }
    let n = history.len() as f64;
    let value = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (conf_sum[b] / m - hits[b] as f64 / m).abs()
        })
        .sum();
    Ok(CalibrationGap { value, cold_start: false })
}

/// The weighted loss for one output. `paired` holds every output the miner
/// gave in the same context, `m` included; `history` is its recent
/// `(confidence, correct)` record, of which the last `history_window` count.
pub fn validator_loss(
    m: &MinerOutput,
    y: bool,
    paired: &[MinerOutput],
    history: &[(f64, bool)],
    config: &ScoringConfig,
) -> Result<LossBreakdown, SubnetError> {
    check_unit(m.c)?;
    let b = brier(m.p, y)?;
    let inc = inconsistency(paired)?;
    let start = history.len().saturating_sub(config.history_window);
    let gap = calibration_gap(&history[start..], config.bin_width)?.value;
    Ok(LossBreakdown {
        brier: b,
        inconsistency: inc,
        calibration_gap: gap,
        total: config.alpha * b + config.beta * inc + config.gamma * gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(p: f64) -> MinerOutput {
        MinerOutput { miner_id: "m".into(), p, c: 0.5, emitted_at: CanonicalTimestamp::from_secs(0), context_id: "ctx".into() }
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(0.5, true).unwrap(), 0.25);
        assert_eq!(brier(0.5, false).unwrap(), 0.25);
        assert_eq!(brier(1.0, true).unwrap(), 0.0);
        assert!((brier(0.8, false).unwrap() - 0.64).abs() < 1e-15);
        assert!(brier(1.2, true).is_err());
    }

    #[test]
    fn inconsistency_examples() {
        assert_eq!(inconsistency(&[out(0.4), out(0.4)]).unwrap(), 0.0);
        assert!((inconsistency(&[out(0.3), out(0.7)]).unwrap() - 0.4).abs() < 1e-12);
        assert!((inconsistency(&[out(0.2), out(0.5), out(0.8)]).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(inconsistency(&[out(0.9)]).unwrap(), 0.0);
        let mut other = out(0.1);
        other.context_id = "ctx2".into();
        assert!(inconsistency(&[out(0.1), other]).is_err());
    }

    #[test]
    fn calibration_examples() {
        // 9 of 10 correct at c = 0.9.
        let h: Vec<_> = (0..10).map(|i| (0.9, i != 0)).collect();
        assert!(calibration_gap(&h, 0.1).unwrap().value.abs() < 1e-12);
        let h: Vec<_> = (0..10).map(|i| (1.0, i % 2 == 0)).collect();
        assert!((calibration_gap(&h, 0.1).unwrap().value - 0.5).abs() < 1e-12);
        // Two equal-mass bins: 0.25 stated vs 0.15 realised, 0.65 vs 0.35.
        let mut h: Vec<_> = (0..20).map(|i| (0.25, i < 3)).collect();
        h.extend((0..20).map(|i| (0.65, i < 7)));
        assert!((calibration_gap(&h, 0.1).unwrap().value - 0.2).abs() < 1e-12);
        let cold = calibration_gap(&[], 0.1).unwrap();
        assert!(cold.cold_start && cold.value == 0.0);
    }

    #[test]
    fn loss_examples() {
        let c = ScoringConfig::default();
        c.validate().unwrap();
        let total = c.alpha * 0.25 + c.beta * 0.1 + c.gamma * 0.2;
        assert!((total - 0.21).abs() < 1e-12);

        let mut perfect = out(1.0);
        perfect.c = 1.0;
        let history = vec![(1.0, true); 50];
        let l = validator_loss(&perfect, true, &[perfect.clone(), perfect.clone()], &history, &c).unwrap();
        assert_eq!(l.total, 0.0);

        let brier_only = ScoringConfig { alpha: 1.0, beta: 0.0, gamma: 0.0, ..Default::default() };
        let m = out(0.3);
        let l = validator_loss(&m, true, &[m.clone(), out(0.9)], &[(0.1, true)], &brier_only).unwrap();
        assert_eq!(l.total, l.brier);
    }

    #[test]
    fn config_rejects_bad_weights() {
        assert!(ScoringConfig { alpha: 0.7, ..Default::default() }.validate().is_err());
        assert!(ScoringConfig { bin_width: 0.3, ..Default::default() }.validate().is_err());
    }
}
