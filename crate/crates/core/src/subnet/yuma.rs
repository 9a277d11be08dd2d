use serde::{Deserialize, Serialize};

use super::{check_unit, SubnetError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metagraph {
    /// `(validator_id, stake)`; stakes are normalised on use.
    pub validators: Vec<(String, f64)>,
    pub miners: Vec<String>,
    pub kappa: f64,
}

impl Metagraph {
    pub fn new(validators: Vec<(String, f64)>, miners: Vec<String>) -> Self {
        Self { validators, miners, kappa: 0.5 }
    }

    fn normalised_stakes(&self) -> Result<Vec<f64>, SubnetError> {
        if self.validators.is_empty() || self.miners.is_empty() {
            return Err(SubnetError::EmptyMetagraph);
        }
        if let Some(&(_, s)) = self.validators.iter().find(|(_, s)| s.is_nan() || *s <= 0.0) {
            return Err(SubnetError::NonPositiveStake(s));
        }
        let total: f64 = self.validators.iter().map(|(_, s)| s).sum();
        Ok(self.validators.iter().map(|(_, s)| s / total).collect())
    }

    fn check_shape(&self, scores: &[Vec<f64>]) -> Result<(), SubnetError> {
        let bad_row = scores.iter().find(|r| r.len() != self.miners.len());
        if scores.len() != self.validators.len() || bad_row.is_some() {
            return Err(SubnetError::ShapeMismatch {
                rows: scores.len(),
                cols: bad_row.or(scores.first()).map_or(0, Vec::len),
                validators: self.validators.len(),
                miners: self.miners.len(),
            });
        }
        for row in scores {
            for &s in row {
                check_unit(s)?;
            }
        }
        Ok(())
    }
}

/// Per miner, the largest score that validators holding at least `kappa` of
/// the stake assigned at or above.
pub fn consensus_scores(scores: &[Vec<f64>], metagraph: &Metagraph) -> Result<Vec<f64>, SubnetError> {
    let stakes = metagraph.normalised_stakes()?;
    metagraph.check_shape(scores)?;
    let consensus = (0..metagraph.miners.len())
        .map(|j| {
            let mut column: Vec<(f64, f64)> = scores.iter().zip(&stakes).map(|(row, &s)| (row[j], s)).collect();
            column.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut cumulative = 0.0;
            for (score, stake) in column {
                cumulative += stake;
                if cumulative >= metagraph.kappa - 1e-12 {
                    return score;
                }
            }
            0.0
        })
        .collect();
    Ok(consensus)
}

/// Clips each validator's score to the miner's consensus, then pays in
/// proportion to the stake-weighted clipped scores. Returns weights that
/// sum to 1, uniform when every clipped score is zero.
pub fn yuma_allocate(scores: &[Vec<f64>], metagraph: &Metagraph) -> Result<Vec<f64>, SubnetError> {
    let consensus = consensus_scores(scores, metagraph)?;
    let stakes = metagraph.normalised_stakes()?;
    let raw: Vec<f64> = (0..metagraph.miners.len())
        .map(|j| {
            scores
                .iter()
                .zip(&stakes)
                .map(|(row, s)| s * row[j].min(consensus[j]))
                .sum()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let n = raw.len() as f64;
    Ok(if total > 0.0 { raw.iter().map(|r| r / total).collect() } else { vec![1.0 / n; raw.len()] })
}
