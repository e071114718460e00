//! Surrogate-based Bayesian calibration on the unit cube with a
//! Beta(2, 2) prior, sampled by parallel-tempered MALA.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{LowRankPrediction, Surrogate};
use crate::rng;

/// Anything that returns a mean and a factored covariance at `theta`.
pub trait Emulator: Sync {
    fn n_outputs(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn predict_low_rank(&self, theta: &[f64]) -> Result<LowRankPrediction>;
}

impl Emulator for Surrogate {
    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn param_dim(&self) -> usize {
        Surrogate::param_dim(self)
    }

    fn predict_low_rank(&self, theta: &[f64]) -> Result<LowRankPrediction> {
        Surrogate::predict_low_rank(self, theta)
    }
}

/// Observations `y` with independent errors of variance `w_diag`.
pub struct CalibrationProblem<'a, E: Emulator> {
    pub y: DVector<f64>,
    pub w_diag: DVector<f64>,
    pub emulator: &'a E,
}

impl<'a, E: Emulator> CalibrationProblem<'a, E> {
    pub fn new(y: DVector<f64>, w_diag: DVector<f64>, emulator: &'a E) -> Result<Self> {
        let m = emulator.n_outputs();
        if y.len() != m || w_diag.len() != m {
            return Err(Error::Dimension(format!(
                "model has {m} outputs but {} observations and {} error variances",
                y.len(),
                w_diag.len()
            )));
        }
        if let Some(j) = (0..m).find(|&j| !(w_diag[j] > 0.0 && w_diag[j].is_finite())) {
            return Err(Error::InvalidInput(format!(
                "error variance {j} must be positive and finite, got {}",
                w_diag[j]
            )));
        }
        if let Some(j) = (0..m).find(|&j| !y[j].is_finite()) {
            return Err(Error::InvalidInput(format!("observation {j} is not finite")));
        }
        Ok(CalibrationProblem { y, w_diag, emulator })
    }

    pub fn dim(&self) -> usize {
        self.emulator.param_dim()
    }

    /// Gaussian log-likelihood with covariance `W + Sigma(theta)`, without
    /// the `2 pi` constant. Outputs the emulator does not model are skipped.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let pred = self.emulator.predict_low_rank(theta)?;
        let keep: Vec<usize> = (0..self.y.len()).filter(|&j| pred.mean[j].is_finite()).collect();
        let k = pred.var.len();
        // V = basis diag(sqrt(var)) restricted to the kept outputs
        let mut vtw_v = DMatrix::<f64>::identity(k, k);
        let mut vtw_r = DVector::<f64>::zeros(k);
        let mut logdet_w = 0.0;
        let mut rwr = 0.0;
        let sd: Vec<f64> = pred.var.iter().map(|v| v.max(0.0).sqrt()).collect();
        for &j in &keep {
            let w = self.w_diag[j];
            let r = self.y[j] - pred.mean[j];
            logdet_w += w.ln();
            rwr += r * r / w;
            for a in 0..k {
                let va = pred.basis[(j, a)] * sd[a];
                vtw_r[a] += va * r / w;
                for b in 0..=a {
                    vtw_v[(a, b)] += va * pred.basis[(j, b)] * sd[b] / w;
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                vtw_v[(b, a)] = vtw_v[(a, b)];
            }
        }
        let chol = vtw_v.cholesky().ok_or_else(|| {
            Error::Numerical("capacitance matrix of W + Sigma is not positive definite".into())
        })?;
        let logdet = logdet_w + crate::linalg::chol_logdet(&chol);
        let quad = rwr - vtw_r.dot(&chol.solve(&vtw_r));
        Ok(-0.5 * logdet - 0.5 * quad)
    }

    /// Log-posterior up to a constant; `-inf` outside the unit cube.
    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        let lp = log_prior(theta);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(lp + self.log_likelihood(theta)?)
    }

    /// Central differences of the log-posterior, step `1e-6` shrunk near
    /// the boundary.
    pub fn grad_log_posterior(&self, theta: &[f64]) -> Result<Vec<f64>> {
        grad_fd(|t| self.log_posterior(t), theta)
    }
}

fn grad_fd(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; theta.len()];
    let mut t = theta.to_vec();
    for l in 0..theta.len() {
        let x = theta[l];
        let h = 1e-6f64.min(0.5 * x.min(1.0 - x));
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gradient requested at boundary coordinate {l} = {x}"
            )));
        }
        t[l] = x + h;
        let fp = f(&t)?;
        t[l] = x - h;
        let fm = f(&t)?;
        t[l] = x;
        g[l] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// `sum_l log(theta_l (1 - theta_l))` on the open unit cube, else `-inf`.
pub fn log_prior(theta: &[f64]) -> f64 {
    if theta.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return f64::NEG_INFINITY;
    }
    theta.iter().map(|t| (t * (1.0 - t)).ln()).sum()
}

/// Width of the central `level` interval of one Beta(2, 2) coordinate.
pub fn prior_interval_width(level: f64) -> f64 {
    use statrs::distribution::{Beta as BetaDist, ContinuousCDF};
    let b = BetaDist::new(2.0, 2.0).expect("valid beta parameters");
    let a = (1.0 - level) / 2.0;
    b.inverse_cdf(1.0 - a) - b.inverse_cdf(a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtlmcConfig {
    /// Retained cold-chain draws.
    pub n_samples: usize,
    pub n_temps: usize,
    /// Adaptation iterations discarded before sampling; `None` means
    /// `n_samples`.
    pub burn_in: Option<usize>,
    pub t_max: f64,
    pub target_accept: f64,
    pub initial_step: f64,
    pub seed: u64,
}

impl Default for PtlmcConfig {
    fn default() -> Self {
        PtlmcConfig {
            n_samples: 2000,
            n_temps: 4,
            burn_in: None,
            t_max: 100.0,
            target_accept: 0.574,
            initial_step: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorChain {
    /// Cold-chain draws, one per row.
    #[serde(with = "crate::linalg::matrix_serde")]
    pub samples: DMatrix<f64>,
    pub log_post: Vec<f64>,
    /// MALA acceptance per temperature over the retained iterations.
    pub acceptance_rates: Vec<f64>,
    /// Swap acceptance per adjacent pair over all iterations.
    pub swap_rates: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

struct ChainState {
    theta: Vec<f64>,
    log_prior: f64,
    log_lik: f64,
    grad: Vec<f64>,
    step: f64,
    rng: ChaCha8Rng,
    accepted: usize,
    proposed: usize,
}

/// Tempered target: the prior is kept, the likelihood is raised to `1/T`.
fn tempered<E: Emulator>(
    prob: &CalibrationProblem<'_, E>,
    theta: &[f64],
    inv_t: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let lp = log_prior(theta);
    if lp == f64::NEG_INFINITY {
        return Ok((lp, f64::NEG_INFINITY, vec![]));
    }
    let ll = prob.log_likelihood(theta)?;
    let g = grad_fd(|t| Ok(log_prior(t) + inv_t * prob.log_likelihood(t)?), theta)?;
    Ok((lp, ll, g))
}

fn mala_step<E: Emulator>(
    prob: &CalibrationProblem<'_, E>,
    c: &mut ChainState,
    inv_t: f64,
) -> Result<bool> {
    let d = c.theta.len();
    let h = c.step;
    let z: Vec<f64> = (0..d).map(|_| c.rng.sample(StandardNormal)).collect();
    let prop: Vec<f64> = (0..d)
        .map(|l| c.theta[l] + 0.5 * h * h * c.grad[l] + h * z[l])
        .collect();
    let u: f64 = c.rng.random();
    c.proposed += 1;
    let (lp, ll, g) = tempered(prob, &prop, inv_t)?;
    if lp == f64::NEG_INFINITY || !ll.is_finite() {
        return Ok(false);
    }
    let log_q = |to: &[f64], from: &[f64], gfrom: &[f64]| -> f64 {
        -(0..d)
            .map(|l| (to[l] - from[l] - 0.5 * h * h * gfrom[l]).powi(2))
            .sum::<f64>()
            / (2.0 * h * h)
    };
    let cur = c.log_prior + inv_t * c.log_lik;
    let new = lp + inv_t * ll;
    let log_a = new - cur + log_q(&c.theta, &prop, &g) - log_q(&prop, &c.theta, &c.grad);
    if u.ln() < log_a {
        c.theta = prop;
        c.log_prior = lp;
        c.log_lik = ll;
        c.grad = g;
        c.accepted += 1;
        return Ok(true);
    }
    Ok(false)
}

/// Parallel-tempered Metropolis-adjusted Langevin sampling of the
/// posterior. Chains advance in lockstep; adjacent pairs (alternating even
/// and odd offsets) propose a swap after every round.
pub fn ptlmc_sample<E: Emulator>(
    prob: &CalibrationProblem<'_, E>,
    cfg: &PtlmcConfig,
) -> Result<PosteriorChain> {
    if cfg.n_samples == 0 || cfg.n_temps == 0 {
        return Err(Error::InvalidInput("n_samples and n_temps must be at least 1".into()));
    }
    if !(cfg.t_max >= 1.0) || !(cfg.initial_step > 0.0) {
        return Err(Error::InvalidInput("t_max must be >= 1 and initial_step > 0".into()));
    }
    let d = prob.dim();
    let nt = cfg.n_temps;
    let temps: Vec<f64> = (0..nt)
        .map(|j| {
            if nt == 1 {
                1.0
            } else {
                cfg.t_max.powf(j as f64 / (nt - 1) as f64)
            }
        })
        .collect();
    let burn = cfg.burn_in.unwrap_or(cfg.n_samples);

    let mut chains: Vec<ChainState> = (0..nt)
        .map(|j| {
            let mut r = rng::stream(cfg.seed, "ptlmc-chain", j as u64);
            let beta = Beta::new(2.0, 2.0).expect("valid beta parameters");
            for _ in 0..100 {
                let theta: Vec<f64> = (0..d).map(|_| r.sample(beta)).collect();
                let (lp, ll, g) = tempered(prob, &theta, 1.0 / temps[j])?;
                if lp.is_finite() && ll.is_finite() && g.iter().all(|v| v.is_finite()) {
                    return Ok(ChainState {
                        theta,
                        log_prior: lp,
                        log_lik: ll,
                        grad: g,
                        step: cfg.initial_step,
                        rng: r,
                        accepted: 0,
                        proposed: 0,
                    });
                }
            }
            Err(Error::Numerical(
                "no prior draw with finite posterior in 100 attempts".into(),
            ))
        })
        .collect::<Result<_>>()?;
    let mut swap_rng = rng::stream(cfg.seed, "ptlmc-swap", 0);
    let mut swaps_acc = vec![0usize; nt.saturating_sub(1)];
    let mut swaps_prop = vec![0usize; nt.saturating_sub(1)];

    let mut samples = DMatrix::zeros(cfg.n_samples, d);
    let mut log_post = Vec::with_capacity(cfg.n_samples);
    for it in 0..burn + cfg.n_samples {
        if it == burn {
            for c in chains.iter_mut() {
                c.accepted = 0;
                c.proposed = 0;
            }
        }
        let moves: Vec<bool> = chains
            .par_iter_mut()
            .zip(temps.par_iter())
            .map(|(c, t)| mala_step(prob, c, 1.0 / t))
            .collect::<Result<_>>()?;
        if it < burn {
            let gamma = (it as f64 + 1.0).powf(-0.6);
            for (c, &acc) in chains.iter_mut().zip(&moves) {
                let a = if acc { 1.0 } else { 0.0 };
                c.step = (c.step.ln() + gamma * (a - cfg.target_accept)).exp().clamp(1e-6, 1.0);
            }
        }
        let mut j = it % 2;
        while j + 1 < nt {
            swaps_prop[j] += 1;
            let (bi, bj) = (1.0 / temps[j], 1.0 / temps[j + 1]);
            let log_a = (bi - bj) * (chains[j + 1].log_lik - chains[j].log_lik);
            let u: f64 = swap_rng.random();
            if u.ln() < log_a {
                let (lo, hi) = chains.split_at_mut(j + 1);
                std::mem::swap(&mut lo[j].theta, &mut hi[0].theta);
                std::mem::swap(&mut lo[j].log_prior, &mut hi[0].log_prior);
                std::mem::swap(&mut lo[j].log_lik, &mut hi[0].log_lik);
                // gradients depend on the temperature, so recompute
                for k in [j, j + 1] {
                    let inv_t = 1.0 / temps[k];
                    chains[k].grad = grad_fd(
                        |t| Ok(log_prior(t) + inv_t * prob.log_likelihood(t)?),
                        &chains[k].theta,
                    )?;
                }
                swaps_acc[j] += 1;
            }
            j += 2;
        }
        if it >= burn {
            let s = it - burn;
            for l in 0..d {
                samples[(s, l)] = chains[0].theta[l];
            }
            log_post.push(chains[0].log_prior + chains[0].log_lik);
        }
    }
    Ok(PosteriorChain {
        samples,
        log_post,
        acceptance_rates: chains
            .iter()
            .map(|c| c.accepted as f64 / c.proposed.max(1) as f64)
            .collect(),
        swap_rates: swaps_acc
            .iter()
            .zip(&swaps_prop)
            .map(|(a, p)| *a as f64 / (*p).max(1) as f64)
            .collect(),
        temperatures: temps,
        step_sizes: chains.iter().map(|c| c.step).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

/// Linear-interpolation quantile of sorted data (the usual "type 7").
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-dimension mean and central `level` interval of the draws.
pub fn posterior_summary(samples: &DMatrix<f64>, level: f64) -> Result<Vec<ParamSummary>> {
    if samples.nrows() == 0 {
        return Err(Error::InvalidInput("empty chain".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} not in (0, 1)")));
    }
    let a = (1.0 - level) / 2.0;
    Ok((0..samples.ncols())
        .map(|l| {
            let mut col: Vec<f64> = samples.column(l).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&col, a);
            let hi = quantile_sorted(&col, 1.0 - a);
            ParamSummary {
                mean: col.iter().sum::<f64>() / col.len() as f64,
                lo,
                hi,
                width: hi - lo,
            }
        })
        .collect())
}
