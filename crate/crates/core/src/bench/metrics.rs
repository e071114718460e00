use nalgebra::DMatrix;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub coverage: f64,
    pub width: f64,
    pub n_evaluated: usize,
}

/// Two-sided standard normal quantile for a central interval of `level`.
pub fn z_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + level / 2.0)
}

/// RMSE, interval coverage and mean interval width over the entries where
/// `truth` is available. Predictive variances below zero count as zero.
pub fn metrics(
    mean: &DMatrix<f64>,
    var: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    level: f64,
) -> Result<Metrics> {
    if mean.shape() != truth.shape() || var.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} / variance {:?} do not match truth {:?}",
            mean.shape(),
            var.shape(),
            truth.shape()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} not in (0, 1)")));
    }
    let z = z_quantile(level);
    let (mut sse, mut covered, mut width, mut count) = (0.0, 0usize, 0.0, 0usize);
    for ((mu, v), y) in mean.iter().zip(var.iter()).zip(truth.iter()) {
        if y.is_nan() {
            continue;
        }
        if !mu.is_finite() || v.is_nan() {
            return Err(Error::Numerical(format!(
                "non-finite prediction ({mu}, {v}) at an evaluated entry"
            )));
        }
        let half = z * v.max(0.0).sqrt();
        let err = y - mu;
        sse += err * err;
        if err.abs() <= half {
            covered += 1;
        }
        width += 2.0 * half;
        count += 1;
    }
    if count == 0 {
        return Err(Error::InvalidInput("holdout has no available entries".into()));
    }
    let c = count as f64;
    Ok(Metrics {
        rmse: (sse / c).sqrt(),
        coverage: covered as f64 / c,
        width: width / c,
        n_evaluated: count,
    })
}
