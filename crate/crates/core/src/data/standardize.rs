use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SimulationDataset;
use crate::error::{Error, Result};

/// Per-column centering and scaling computed over available entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub col_center: Vec<f64>,
    pub col_scale: Vec<f64>,
}

impl StandardizationStats {
    pub fn n_outputs(&self) -> usize {
        self.col_center.len()
    }

    pub fn standardize_matrix(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = f.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (c, s) = (self.col_center[j], self.col_scale[j]);
            col.iter_mut().for_each(|v| *v = (*v - c) / s);
        }
        out
    }

    pub fn destandardize_matrix(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = f.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (c, s) = (self.col_center[j], self.col_scale[j]);
            col.iter_mut().for_each(|v| *v = *v * s + c);
        }
        out
    }

    pub fn destandardize_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            v.len(),
            v.iter()
                .enumerate()
                .map(|(j, x)| x * self.col_scale[j] + self.col_center[j]),
        )
    }
}

/// Floor applied to a column's standard deviation.
fn floored_scale(std: f64, mean: f64) -> f64 {
    std.max(1e-10 * mean.abs() + 1e-12)
}

/// Center and scale every column to zero mean and unit (population)
/// variance over its available entries. The missing mask is unchanged.
pub fn standardize(ds: &SimulationDataset) -> Result<(SimulationDataset, StandardizationStats)> {
    let f = ds.responses();
    let m = f.ncols();
    let mut center = Vec::with_capacity(m);
    let mut scale = Vec::with_capacity(m);
    for j in 0..m {
        let vals: Vec<f64> = f.column(j).iter().copied().filter(|v| !v.is_nan()).collect();
        if vals.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "column {j} has {} available entries; at least 2 are needed to standardize",
                vals.len()
            )));
        }
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        center.push(mean);
        scale.push(floored_scale(var.sqrt(), mean));
    }
    let stats = StandardizationStats {
        col_center: center,
        col_scale: scale,
    };
    let standardized = ds.with_responses(stats.standardize_matrix(f))?;
    Ok((standardized, stats))
}
