use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::SimulationDataset;
use crate::error::{Error, Result};
use crate::gp::{fit_component, ComponentGP, FitOptions, PlainPcgp, SurrogateConfig};
use crate::rng;

/// Plain principal-component GP on the rows without any missing entry.
pub fn baseline_complete_rows(ds: &SimulationDataset, cfg: &SurrogateConfig) -> Result<PlainPcgp> {
    let rows = ds.complete_rows();
    if rows.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "only {} complete rows; need at least 2",
            rows.len()
        )));
    }
    PlainPcgp::fit(&ds.select_rows(&rows)?, cfg)
}

/// Fill every missing response with the mean of its `k` nearest available
/// neighbours in joint (theta, x) space, each coordinate rescaled to [0, 1].
pub fn knn_impute(ds: &SimulationDataset, k: usize) -> Result<SimulationDataset> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let (n, m) = (ds.n_runs(), ds.n_outputs());
    let theta = unit_scale(ds.theta());
    let x = unit_scale(ds.locations());
    let f = ds.responses();
    let avail: Vec<(usize, usize)> = (0..m)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .filter(|&(i, j)| !f[(i, j)].is_nan())
        .collect();
    if avail.is_empty() {
        return Err(Error::InvalidInput("no available responses to impute from".into()));
    }
    // squared distances split into a theta part and an x part
    let dist2 = |a: &DMatrix<f64>, i: usize, j: usize| -> f64 {
        a.row(i).iter().zip(a.row(j).iter()).map(|(p, q)| (p - q).powi(2)).sum()
    };
    let missing: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| f[(i, j)].is_nan())
        .collect();
    let fills: Vec<f64> = missing
        .par_iter()
        .map(|&(i, j)| {
            let mut d: Vec<(f64, usize)> = avail
                .iter()
                .enumerate()
                .map(|(a, &(r, c))| (dist2(&theta, i, r) + dist2(&x, j, c), a))
                .collect();
            let kk = k.min(d.len());
            if kk < d.len() {
                d.select_nth_unstable_by(kk - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            d[..kk].iter().map(|&(_, a)| f[avail[a]]).sum::<f64>() / kk as f64
        })
        .collect();
    let mut out = f.clone();
    for (&(i, j), v) in missing.iter().zip(fills) {
        out[(i, j)] = v;
    }
    ds.with_responses(out)
}

fn unit_scale(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for l in 0..a.ncols() {
        let col = a.column(l);
        let (lo, hi) = (col.min(), col.max());
        let span = hi - lo;
        for i in 0..a.nrows() {
            out[(i, l)] = if span > 0.0 { (a[(i, l)] - lo) / span } else { 0.0 };
        }
    }
    out
}

/// kNN imputation followed by a plain principal-component GP.
pub fn baseline_knn_impute(
    ds: &SimulationDataset,
    k: usize,
    cfg: &SurrogateConfig,
) -> Result<PlainPcgp> {
    PlainPcgp::fit(&knn_impute(ds, k)?, cfg)
}

/// One univariate GP per response column on that column's available runs.
pub struct ColGp {
    columns: Vec<ColumnModel>,
}

enum ColumnModel {
    Fitted {
        gp: ComponentGP,
        center: f64,
        scale: f64,
    },
    /// Too few runs: mean `center`, variance `scale^2`.
    Prior { center: f64, scale: f64 },
}

impl ColGp {
    pub fn fit(ds: &SimulationDataset, cfg: &SurrogateConfig) -> Result<Self> {
        let m = ds.n_outputs();
        let columns = (0..m)
            .into_par_iter()
            .map(|j| {
                let rows: Vec<usize> = (0..ds.n_runs()).filter(|&i| !ds.is_missing(i, j)).collect();
                let vals: Vec<f64> = rows.iter().map(|&i| ds.responses()[(i, j)]).collect();
                let (center, scale) = match vals.len() {
                    0 => (0.0, 1.0),
                    1 => (vals[0], 1.0),
                    c => {
                        let mean = vals.iter().sum::<f64>() / c as f64;
                        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                        (mean, var.sqrt().max(1e-10 * mean.abs() + 1e-12))
                    }
                };
                if rows.len() < 2 {
                    return Ok(ColumnModel::Prior { center, scale });
                }
                let theta = Arc::new(ds.theta().select_rows(&rows));
                let g = DVector::from_iterator(rows.len(), vals.iter().map(|v| (v - center) / scale));
                let opts = FitOptions {
                    alpha: cfg.alpha,
                    eta: cfg.eta,
                    restarts: cfg.restarts,
                    seed: rng::child_seed(cfg.seed, "colgp", j as u64),
                    max_iter: cfg.opt_max_iter,
                };
                let gp = fit_component(&g, &DVector::zeros(rows.len()), 1.0, theta, &opts)?;
                Ok(ColumnModel::Fitted { gp, center, scale })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ColGp { columns })
    }

    pub fn predict_diag(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let m = self.columns.len();
        let mut mean = DVector::zeros(m);
        let mut var = DVector::zeros(m);
        for (j, c) in self.columns.iter().enumerate() {
            let (mu, v) = match c {
                ColumnModel::Fitted { gp, center, scale } => {
                    if theta_star.len() != gp.theta().ncols() {
                        return Err(Error::Dimension(format!(
                            "parameter vector has {} entries, model expects {}",
                            theta_star.len(),
                            gp.theta().ncols()
                        )));
                    }
                    let (mu, v) = gp.predict(theta_star);
                    (center + scale * mu, scale * scale * v)
                }
                ColumnModel::Prior { center, scale } => (*center, scale * scale),
            };
            mean[j] = mu;
            var[j] = v;
        }
        Ok((mean, var))
    }
}
