use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UpliftState {
    Enabled,
    Disabled,
}

fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Disabled iff the variance of per-miner mean loss across active miners
/// exceeds `variance_threshold`. Miners with no samples are inactive.
pub fn uplift_decision(loss_samples: &[Vec<f64>], variance_threshold: f64) -> (UpliftState, f64) {
    let means: Vec<f64> = loss_samples
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let variance = population_variance(&means);
    let state = if variance > variance_threshold { UpliftState::Disabled } else { UpliftState::Enabled };
    (state, variance)
}

/// Operator switch over the subnet path. The state only changes after
/// `window_len` consecutive observations on the other side of the
/// threshold, so a loss series hovering at the boundary does not flap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftSwitch {
    state: UpliftState,
    window_len: usize,
    variance_threshold: f64,
    streak: usize,
}

impl UpliftSwitch {
    pub fn new(window_len: usize, variance_threshold: f64) -> Self {
        Self { state: UpliftState::Enabled, window_len: window_len.max(1), variance_threshold, streak: 0 }
    }

    pub fn state(&self) -> UpliftState {
        self.state
    }

    /// Feeds one observation of per-miner loss samples and returns the
    /// resulting switch state.
    pub fn observe(&mut self, loss_samples: &[Vec<f64>]) -> UpliftState {
        let (verdict, _) = uplift_decision(loss_samples, self.variance_threshold);
        if verdict == self.state {
            self.streak = 0;
        } else {
            self.streak += 1;
            if self.streak >= self.window_len {
                self.state = verdict;
                self.streak = 0;
            }
        }
        self.state
    }

    pub fn serve(&self, standalone_p: f64, subnet_p: Option<f64>) -> ServedPrediction {
        match (self.state, subnet_p) {
            (UpliftState::Enabled, Some(p)) => ServedPrediction { p, source: PredictionSource::Subnet },
            _ => ServedPrediction { p: standalone_p, source: PredictionSource::Standalone },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PredictionSource {
    Subnet,
    Standalone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServedPrediction {
    pub p: f64,
    pub source: PredictionSource,
}
