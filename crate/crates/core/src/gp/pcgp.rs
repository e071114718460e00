use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::component::{fit_component, FitOptions};
use super::kernel::{correlation, KernelHyper};
use super::surrogate::SurrogateConfig;
use crate::data::{standardize, SimulationDataset, StandardizationStats};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, solve_lower, symmetrize};
use crate::pca::{svd_subspace, PrincipalSubspace};
use crate::rng;

struct PlainComponent {
    hyper: KernelHyper,
    lambda: f64,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

/// Principal-component GP for complete data: no imputation, no inflation.
pub struct PlainPcgp {
    pub stats: StandardizationStats,
    pub subspace: PrincipalSubspace,
    theta: Arc<DMatrix<f64>>,
    components: Vec<PlainComponent>,
}

impl PlainPcgp {
    /// Fit with hyperparameters chosen by maximum likelihood.
    pub fn fit(ds: &SimulationDataset, cfg: &SurrogateConfig) -> Result<Self> {
        let (stats, subspace, g) = Self::decompose(ds, cfg.variance_fraction)?;
        let theta = Arc::new(ds.theta().clone());
        let n = ds.n_runs();
        let hypers = (0..subspace.kappa())
            .into_par_iter()
            .map(|k| {
                let opts = FitOptions {
                    alpha: cfg.alpha,
                    eta: cfg.eta,
                    restarts: cfg.restarts,
                    seed: rng::child_seed(cfg.seed, "component", k as u64),
                    max_iter: cfg.opt_max_iter,
                };
                let col = g.column(k).into_owned();
                fit_component(&col, &DVector::zeros(n), subspace.lambda[k], theta.clone(), &opts)
                    .map(|c| c.hyper)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(stats, subspace, theta, &g, hypers)
    }

    /// Fit at fixed per-component hyperparameters.
    pub fn fit_with_hypers(
        ds: &SimulationDataset,
        variance_fraction: f64,
        hypers: &[KernelHyper],
    ) -> Result<Self> {
        let (stats, subspace, g) = Self::decompose(ds, variance_fraction)?;
        if hypers.len() != subspace.kappa() {
            return Err(Error::Dimension(format!(
                "{} hyperparameter sets for {} components",
                hypers.len(),
                subspace.kappa()
            )));
        }
        let theta = Arc::new(ds.theta().clone());
        Self::assemble(stats, subspace, theta, &g, hypers.to_vec())
    }

    fn decompose(
        ds: &SimulationDataset,
        variance_fraction: f64,
    ) -> Result<(StandardizationStats, PrincipalSubspace, DMatrix<f64>)> {
        if !ds.is_complete() {
            return Err(Error::InvalidInput(
                "plain principal-component GP needs complete responses".into(),
            ));
        }
        let (std_ds, stats) = standardize(ds)?;
        let f = std_ds.responses();
        let subspace = svd_subspace(f, variance_fraction)?;
        let mut g = DMatrix::zeros(f.nrows(), subspace.kappa());
        for i in 0..f.nrows() {
            let row: Vec<f64> = f.row(i).iter().copied().collect();
            g.set_row(i, &subspace.project(&row).transpose());
        }
        Ok((stats, subspace, g))
    }

    fn assemble(
        stats: StandardizationStats,
        subspace: PrincipalSubspace,
        theta: Arc<DMatrix<f64>>,
        g: &DMatrix<f64>,
        hypers: Vec<KernelHyper>,
    ) -> Result<Self> {
        let n = theta.nrows();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| theta.row(i).iter().copied().collect()).collect();
        let components = hypers
            .into_iter()
            .enumerate()
            .map(|(k, hyper)| {
                let mut r = DMatrix::zeros(n, n);
                for i in 0..n {
                    r[(i, i)] = 1.0 + hyper.nugget();
                    for j in 0..i {
                        let c = correlation(&rows[i], &rows[j], &hyper);
                        r[(i, j)] = c;
                        r[(j, i)] = c;
                    }
                }
                let (chol, _) = cholesky_with_jitter(r, 6)?;
                let weights = chol.solve(&g.column(k).into_owned());
                Ok(PlainComponent {
                    hyper,
                    lambda: subspace.lambda[k],
                    chol,
                    weights,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PlainPcgp {
            stats,
            subspace,
            theta,
            components,
        })
    }

    pub fn hypers(&self) -> Vec<KernelHyper> {
        self.components.iter().map(|c| c.hyper.clone()).collect()
    }

    fn component_moments(&self, theta_star: &[f64]) -> Vec<(f64, f64)> {
        let n = self.theta.nrows();
        let rows: Vec<Vec<f64>> =
            (0..n).map(|i| self.theta.row(i).iter().copied().collect()).collect();
        self.components
            .iter()
            .map(|c| {
                let r = DVector::from_fn(n, |i, _| correlation(theta_star, &rows[i], &c.hyper));
                let mu = r.dot(&c.weights);
                let h = solve_lower(&c.chol, &r);
                (mu, (c.lambda * (1.0 - h.norm_squared())).max(0.0))
            })
            .collect()
    }

    /// Mean and covariance on the standardized scale.
    pub fn predict_standardized(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if theta_star.len() != self.theta.ncols() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, model expects {}",
                theta_star.len(),
                self.theta.ncols()
            )));
        }
        let mom = self.component_moments(theta_star);
        let k = mom.len();
        let mu = DVector::from_iterator(k, mom.iter().map(|c| c.0));
        let var = DVector::from_iterator(k, mom.iter().map(|c| c.1));
        let phi = &self.subspace.phi;
        let mut cov = phi * DMatrix::from_diagonal(&var) * phi.transpose();
        symmetrize(&mut cov);
        Ok((phi * mu, cov))
    }

    /// Mean and marginal variances on the response scale.
    pub fn predict_diag(&self, theta_star: &[f64]) -> Result<(DVector<f64>, DVector<f64>)> {
        let (mu, cov) = self.predict_standardized(theta_star)?;
        let s = &self.stats;
        let mean = DVector::from_fn(mu.len(), |j, _| s.col_center[j] + s.col_scale[j] * mu[j]);
        let var = DVector::from_fn(mu.len(), |j, _| s.col_scale[j].powi(2) * cov[(j, j)]);
        Ok((mean, var))
    }
}
