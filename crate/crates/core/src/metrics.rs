//! Localization error, success rate, energy bookkeeping and empirical CDFs.

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dataset::format_decimal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub index: usize,
    pub error: f64,
}

/// How a 2-D residual is reduced to a scalar error in meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    #[default]
    Euclidean,
    /// Mean of the per-axis absolute differences.
    MeanAbsolute,
}

impl ErrorNorm {
    pub fn apply(self, dx: f64, dy: f64) -> f64 {
        match self {
            ErrorNorm::Euclidean => dx.hypot(dy),
            ErrorNorm::MeanAbsolute => 0.5 * (dx.abs() + dy.abs()),
        }
    }
}

/// Whether an error exactly at the threshold counts as a success.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Inclusive,
    Strict,
}

pub fn localization_errors(predictions: &[[f64; 2]], truths: &[[f64; 2]]) -> Result<Vec<ErrorSample>> {
    localization_errors_with(predictions, truths, ErrorNorm::Euclidean)
}

pub fn localization_errors_with(
    predictions: &[[f64; 2]],
    truths: &[[f64; 2]],
    norm: ErrorNorm,
) -> Result<Vec<ErrorSample>> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension {
            context: "localization_errors",
            expected: truths.len(),
            got: predictions.len(),
        });
    }
    predictions
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(index, (p, t))| sample(index, p[0] - t[0], p[1] - t[1], norm))
        .collect()
}

/// Row-wise errors between two `n x 2` matrices.
pub fn localization_errors_matrix(
    predictions: ArrayView2<f64>,
    truths: ArrayView2<f64>,
    norm: ErrorNorm,
) -> Result<Vec<ErrorSample>> {
    if predictions.dim() != truths.dim() || truths.ncols() != 2 {
        return Err(Error::Dimension {
            context: "localization_errors",
            expected: truths.nrows(),
            got: predictions.nrows(),
        });
    }
    predictions
        .rows()
        .into_iter()
        .zip(truths.rows())
        .enumerate()
        .map(|(index, (p, t))| sample(index, p[0] - t[0], p[1] - t[1], norm))
        .collect()
}

fn sample(index: usize, dx: f64, dy: f64, norm: ErrorNorm) -> Result<ErrorSample> {
    let error = norm.apply(dx, dy);
    if !error.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite localization error at sample {index}"
        )));
    }
    Ok(ErrorSample { index, error })
}

pub fn mean_error(samples: &[ErrorSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("mean_error"));
    }
    Ok(samples.iter().map(|s| s.error).sum::<f64>() / samples.len() as f64)
}

/// Fraction of samples with error `<= delta`.
pub fn success_rate(samples: &[ErrorSample], delta: f64) -> Result<f64> {
    success_rate_with(samples, delta, Boundary::Inclusive)
}

pub fn success_rate_with(samples: &[ErrorSample], delta: f64, boundary: Boundary) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("success_rate"));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!(
            "success threshold must be positive, got {delta}"
        )));
    }
    let hits = samples
        .iter()
        .filter(|s| match boundary {
            Boundary::Inclusive => s.error <= delta,
            Boundary::Strict => s.error < delta,
        })
        .count();
    Ok(fraction(hits, samples.len()))
}

fn fraction(count: usize, total: usize) -> f64 {
    count as f64 / total as f64
}

/// Energy drawn over one epoch at constant CPU and GPU power.
pub fn epoch_energy(p_cpu_w: f64, p_gpu_w: f64, t_epoch_s: f64) -> f64 {
    (p_gpu_w + p_cpu_w) * t_epoch_s
}

/// Empirical CDF over distinct error values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    errors: Vec<f64>,
    fractions: Vec<f64>,
}

impl CdfCurve {
    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.errors.iter().copied().zip(self.fractions.iter().copied())
    }

    /// `F(x)`: fraction of samples with error `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = self.errors.partition_point(|&e| e <= x);
        if k == 0 {
            0.0
        } else {
            self.fractions[k - 1]
        }
    }

    /// Smallest error whose cumulative fraction reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let k = self.fractions.partition_point(|&f| f < q);
        self.errors[k.min(self.errors.len() - 1)]
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("error_m,cum_fraction\n");
        for (e, f) in self.points() {
            out.push_str(&format_decimal(e));
            out.push(',');
            out.push_str(&format_decimal(f));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn build_cdf(samples: &[ErrorSample]) -> Result<CdfCurve> {
    if samples.is_empty() {
        return Err(Error::Empty("build_cdf"));
    }
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.error).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut errors = Vec::new();
    let mut fractions = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        if i + 1 < n && sorted[i + 1] == e {
            continue;
        }
        errors.push(e);
        fractions.push(fraction(i + 1, n));
    }
    Ok(CdfCurve { errors, fractions })
}
