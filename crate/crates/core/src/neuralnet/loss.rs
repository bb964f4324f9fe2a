use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean of squared residuals over every batch element and output coordinate.
pub fn mse_loss(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Dimension {
            context: "mse_loss rows",
            expected: target.nrows() * target.ncols(),
            got: pred.nrows() * pred.ncols(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse_loss batch"));
    }
    let mut sum = 0.0;
    Zip::from(&pred).and(&target).for_each(|p, t| sum += (p - t) * (p - t));
    Ok(sum / pred.len() as f64)
}

/// Weights of the source and target terms in the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_t: f64,
}

impl Default for LossWeights {
    /// Target-only fine-tuning.
    fn default() -> Self {
        Self {
            lambda_s: 0.0,
            lambda_t: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_s >= 0.0
            && self.lambda_t >= 0.0
            && self.lambda_s + self.lambda_t > 0.0
            && self.lambda_s.is_finite()
            && self.lambda_t.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "/train/loss_weights",
                "weights must be finite, non-negative and not both zero",
            ))
        }
    }
}

pub fn combined_loss(loss_s: f64, loss_t: f64, weights: LossWeights) -> f64 {
    weights.lambda_s * loss_s + weights.lambda_t * loss_t
}
