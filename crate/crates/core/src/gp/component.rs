use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;

use super::kernel::{correlation, variance_inflation, KernelHyper};
use super::lbfgs::{self, LbfgsConfig};
use super::likelihood::{build_adjusted_corr, LikelihoodProblem};
use crate::error::{Error, Result};
use crate::linalg::solve_lower;
use crate::rng;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub alpha: f64,
    pub eta: f64,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            alpha: 0.3,
            eta: 10.0,
            restarts: 4,
            seed: 0,
            max_iter: 200,
        }
    }
}

/// One fitted component GP on the imputed projections.
#[derive(Debug, Clone)]
pub struct ComponentGP {
    pub hyper: KernelHyper,
    pub beta: f64,
    pub lambda: f64,
    pub v: DVector<f64>,
    pub g: DVector<f64>,
    /// Negative log-likelihood at the fitted hyperparameters.
    pub nll: f64,
    theta: Arc<DMatrix<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha_vec: DVector<f64>,
}

impl ComponentGP {
    /// Assemble a component at fixed hyperparameters.
    pub fn from_hypers(
        theta: Arc<DMatrix<f64>>,
        g: DVector<f64>,
        v: DVector<f64>,
        lambda: f64,
        hyper: KernelHyper,
        beta: f64,
    ) -> Result<Self> {
        let n = theta.nrows();
        if g.len() != n || v.len() != n || hyper.dim() != theta.ncols() {
            return Err(Error::Dimension(format!(
                "component with {n} runs got {} projections, {} inflation terms, {} lengthscales",
                g.len(),
                v.len(),
                hyper.dim()
            )));
        }
        let chol = build_adjusted_corr(&theta, &hyper, beta, &v)?;
        let alpha_vec = chol.solve(&g);
        let nll = 0.5 * crate::linalg::chol_logdet(&chol) + g.dot(&alpha_vec) / (2.0 * lambda);
        Ok(ComponentGP {
            hyper,
            beta,
            lambda,
            v,
            g,
            nll,
            theta,
            chol,
            alpha_vec,
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn alpha_vec(&self) -> &DVector<f64> {
        &self.alpha_vec
    }

    fn cross_corr(&self, theta_star: &[f64]) -> DVector<f64> {
        let n = self.theta.nrows();
        let mut row = vec![0.0; self.theta.ncols()];
        DVector::from_fn(n, |i, _| {
            for (l, r) in row.iter_mut().enumerate() {
                *r = self.theta[(i, l)];
            }
            correlation(theta_star, &row, &self.hyper)
        })
    }

    /// Predictive mean and variance of the component at `theta_star`.
    pub fn predict(&self, theta_star: &[f64]) -> (f64, f64) {
        let r = self.cross_corr(theta_star);
        let mu = r.dot(&self.alpha_vec);
        let h = solve_lower(&self.chol, &r);
        let var = (self.lambda * (1.0 - h.norm_squared())).max(0.0);
        (mu, var)
    }
}

pub fn predict_component(comp: &ComponentGP, theta_star: &[f64]) -> (f64, f64) {
    comp.predict(theta_star)
}

/// Per-dimension median of pairwise absolute differences, on at most the
/// first 400 runs.
fn median_spacing(theta: &DMatrix<f64>) -> Vec<f64> {
    let n = theta.nrows().min(400);
    (0..theta.ncols())
        .map(|l| {
            let mut diffs = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in 0..i {
                    diffs.push((theta[(i, l)] - theta[(j, l)]).abs());
                }
            }
            diffs.sort_by(f64::total_cmp);
            let med = if diffs.is_empty() { 0.0 } else { diffs[diffs.len() / 2] };
            if med > 0.0 {
                med
            } else {
                1.0
            }
        })
        .collect()
}

/// Starting points: median spacing times 0.5, 1 and 2, then random
/// log-uniform draws within a decade of the median.
fn starting_points(theta: &DMatrix<f64>, restarts: usize, seed: u64) -> Vec<Vec<f64>> {
    let med = median_spacing(theta);
    let mut rng = rng::stream(seed, "gp-restart", 0);
    (0..restarts.max(1))
        .map(|r| match r {
            0..=2 => {
                let f = [1.0, 0.5, 2.0][r];
                med.iter().map(|m| (m * f).ln()).collect()
            }
            _ => med
                .iter()
                .map(|m| m.ln() + rng.random_range(-10f64.ln()..10f64.ln()))
                .collect(),
        })
        .collect()
}

/// Fit one component by multistart L-BFGS on the negative log-likelihood.
///
/// When every inflation term is zero, beta has no effect and is held at 1.
pub fn fit_component(
    g_col: &DVector<f64>,
    w_col: &DVector<f64>,
    lambda: f64,
    theta: Arc<DMatrix<f64>>,
    opts: &FitOptions,
) -> Result<ComponentGP> {
    let n = theta.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 runs, got {n}")));
    }
    if g_col.len() != n || w_col.len() != n {
        return Err(Error::Dimension(format!(
            "{n} runs but {} projections and {} weights",
            g_col.len(),
            w_col.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("component scale must be positive, got {lambda}")));
    }
    let v = w_col.map(|w| variance_inflation(w, opts.alpha, opts.eta));
    let prob = LikelihoodProblem {
        theta: &theta,
        g: g_col,
        v: &v,
        lambda,
        fit_beta: v.iter().any(|x| *x > 0.0),
    };
    let (lo, hi) = prob.bounds();
    let cfg = LbfgsConfig {
        max_iter: opts.max_iter,
        ..Default::default()
    };
    let starts: Vec<Vec<f64>> = starting_points(&theta, opts.restarts, opts.seed)
        .into_iter()
        .map(|mut x| {
            x.push(1e-6f64.ln());
            if prob.fit_beta {
                x.push(0.0);
            }
            x
        })
        .collect();
    let results: Vec<lbfgs::LbfgsResult> = starts
        .par_iter()
        .map(|x0| lbfgs::minimize(|x| prob.eval(x), x0, &lo, &hi, &cfg))
        .collect();
    // first strictly best wins so ties resolve by restart order
    let mut best: Option<&lbfgs::LbfgsResult> = None;
    for r in &results {
        if r.f.is_finite() && best.is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Numerical(format!(
            "all {} restarts failed to factor the correlation matrix",
            results.len()
        ))
    })?;
    let (hyper, beta) = prob.unpack(&best.x);
    ComponentGP::from_hypers(theta, g_col.clone(), v, lambda, hyper, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gp_draw(theta: &DMatrix<f64>, ell: f64, seed: u64) -> DVector<f64> {
        let n = theta.nrows();
        let h = KernelHyper::new(&vec![ell; theta.ncols()], 1e-8);
        let a = super::super::likelihood::adjusted_corr_matrix(theta, &h, 0.0, &DVector::zeros(n));
        let l = Cholesky::new(a).unwrap().unpack();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        l * z
    }

    #[test]
    fn recovers_lengthscale() {
        let n = 200;
        let theta = Arc::new(DMatrix::from_fn(n, 1, |i, _| (i as f64 + 0.5) / n as f64));
        let g = gp_draw(&theta, 0.2, 3);
        let comp = fit_component(&g, &DVector::zeros(n), 1.0, theta, &FitOptions::default())
            .unwrap();
        let ell = comp.hyper.lengthscales()[0];
        assert!(ell > 0.2 / 1.5 && ell < 0.2 * 1.5, "lengthscale {ell}");
    }

    #[test]
    fn zero_weights_hold_beta_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = Arc::new(DMatrix::from_fn(15, 2, |_, _| rng.random::<f64>()));
        let g = DVector::from_fn(15, |i, _| (theta[(i, 0)] * 3.0).sin() + theta[(i, 1)]);
        let comp =
            fit_component(&g, &DVector::zeros(15), 1.0, theta, &FitOptions::default()).unwrap();
        assert_eq!(comp.beta, 1.0);
        assert!(comp.v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicate_inputs_are_absorbed_by_nugget() {
        let theta = Arc::new(DMatrix::from_row_slice(4, 1, &[0.1, 0.1, 0.6, 0.9]));
        let g = DVector::from_vec(vec![1.0, -1.0, 0.3, 0.2]);
        let comp = fit_component(&g, &DVector::zeros(4), 1.0, theta, &FitOptions::default());
        assert!(comp.is_ok());
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = Arc::new(DMatrix::from_fn(25, 2, |_, _| rng.random::<f64>()));
        let g = DVector::from_fn(25, |i, _| (4.0 * theta[(i, 0)]).cos() * theta[(i, 1)]);
        let w = DVector::from_fn(25, |i, _| if i % 5 == 0 { 0.4 } else { 0.0 });
        let opts = FitOptions {
            seed: 9,
            ..Default::default()
        };
        let a = fit_component(&g, &w, 0.8, theta.clone(), &opts).unwrap();
        let b = fit_component(&g, &w, 0.8, theta, &opts).unwrap();
        assert_eq!(a.hyper, b.hyper);
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn prediction_limits() {
        let theta = Arc::new(DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 1.0]));
        let g = DVector::from_vec(vec![0.4, -0.2, 0.9]);
        let h = KernelHyper::new(&[0.3], 1e-8);
        let comp = ComponentGP::from_hypers(theta, g, DVector::zeros(3), 2.0, h, 1.0).unwrap();
        let (mu, var) = comp.predict(&[0.5]);
        assert!((mu + 0.2).abs() < 1e-6);
        assert!(var <= 2.0 * 2.0 * 1e-8);
        let (mu, var) = comp.predict(&[100.0]);
        assert!(mu.abs() < 1e-12);
        assert!((var - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_scalar_algebra() {
        let theta = Arc::new(DMatrix::from_element(1, 1, 0.0));
        let h = KernelHyper::new(&[0.5], 1e-4);
        let v = DVector::from_element(1, 0.7);
        let comp = ComponentGP::from_hypers(theta, DVector::from_element(1, 2.0), v, 1.0, h, 1.5)
            .unwrap();
        let r = (-0.5f64 * (0.2f64 / 0.5).powi(2)).exp();
        let (mu, _) = comp.predict(&[0.2]);
        assert!((mu - r * 2.0 / (1.0 + 1.5 * 0.7 + 1e-4)).abs() < 1e-14);
    }
}
