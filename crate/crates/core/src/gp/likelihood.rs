use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::{correlation, variance_inflation, KernelHyper};
use crate::error::Result;
use crate::linalg::{chol_logdet, cholesky_with_jitter};

pub const BETA_BOUNDS: (f64, f64) = (1e-3, 1e3);

/// `R + nugget I + beta diag(v)` as a dense matrix.
pub(crate) fn adjusted_corr_matrix(
    theta: &DMatrix<f64>,
    hyper: &KernelHyper,
    beta: f64,
    v: &DVector<f64>,
) -> DMatrix<f64> {
    let n = theta.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| theta.row(i).iter().copied().collect()).collect();
    let nugget = hyper.nugget();
    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = 1.0 + nugget + beta * v[i];
        for j in 0..i {
            let c = correlation(&rows[i], &rows[j], hyper);
            r[(i, j)] = c;
            r[(j, i)] = c;
        }
    }
    r
}

/// Factor the adjusted correlation matrix, escalating jitter on failure.
pub fn build_adjusted_corr(
    theta: &DMatrix<f64>,
    hyper: &KernelHyper,
    beta: f64,
    v: &DVector<f64>,
) -> Result<Cholesky<f64, Dyn>> {
    let (c, jitter) = cholesky_with_jitter(adjusted_corr_matrix(theta, hyper, beta, v), 6)?;
    if jitter > 0.0 {
        log::debug!("adjusted correlation needed jitter {jitter:.2e}");
    }
    Ok(c)
}

/// Negative log-likelihood of one component over the packed parameter
/// vector `[log ell_1 .. log ell_d, log nugget, (log beta)]`.
///
/// `log beta` is present only when `fit_beta` is set; otherwise beta is 1.
pub struct LikelihoodProblem<'a> {
    pub theta: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub v: &'a DVector<f64>,
    pub lambda: f64,
    pub fit_beta: bool,
}

impl LikelihoodProblem<'_> {
    pub fn n_params(&self) -> usize {
        self.theta.ncols() + 1 + usize::from(self.fit_beta)
    }

    pub fn unpack(&self, x: &[f64]) -> (KernelHyper, f64) {
        let d = self.theta.ncols();
        let hyper = KernelHyper {
            log_lengthscales: x[..d].to_vec(),
            log_nugget: x[d],
        };
        let beta = if self.fit_beta { x[d + 1].exp() } else { 1.0 };
        (hyper, beta)
    }

    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        use super::kernel::{LENGTHSCALE_BOUNDS as L, NUGGET_BOUNDS as N};
        let d = self.theta.ncols();
        let mut lo = vec![L.0.ln(); d];
        let mut hi = vec![L.1.ln(); d];
        lo.push(N.0.ln());
        hi.push(N.1.ln());
        if self.fit_beta {
            lo.push(BETA_BOUNDS.0.ln());
            hi.push(BETA_BOUNDS.1.ln());
        }
        (lo, hi)
    }

    /// Value and gradient; `+inf` when the matrix cannot be factored.
    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let np = self.n_params();
        let fail = (f64::INFINITY, vec![0.0; np]);
        let (hyper, beta) = self.unpack(x);
        let n = self.theta.nrows();
        let d = self.theta.ncols();
        let r = adjusted_corr_matrix(self.theta, &hyper, beta, self.v);
        let Some(chol) = Cholesky::new(r.clone()) else {
            return fail;
        };
        let alpha = chol.solve(self.g);
        let lam = self.lambda;
        let value = 0.5 * chol_logdet(&chol) + self.g.dot(&alpha) / (2.0 * lam);
        if !value.is_finite() {
            return fail;
        }
        let rinv = chol.inverse();

        let inv_l2: Vec<f64> = hyper.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
        let mut grad = vec![0.0; np];
        for i in 0..n {
            for j in 0..i {
                let w = rinv[(i, j)] - alpha[i] * alpha[j] / lam;
                // off-diagonal pairs appear twice in the trace
                let wr = w * r[(i, j)];
                for l in 0..d {
                    let diff = self.theta[(i, l)] - self.theta[(j, l)];
                    grad[l] += wr * diff * diff * inv_l2[l];
                }
            }
        }
        let nugget = hyper.nugget();
        let mut g_nug = 0.0;
        let mut g_beta = 0.0;
        for i in 0..n {
            let wii = rinv[(i, i)] - alpha[i] * alpha[i] / lam;
            g_nug += wii;
            g_beta += self.v[i] * wii;
        }
        grad[d] = 0.5 * nugget * g_nug;
        if self.fit_beta {
            grad[d + 1] = 0.5 * beta * g_beta;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return fail;
        }
        (value, grad)
    }
}

/// Negative log-likelihood and its gradient with respect to
/// `(log ell_1 .. log ell_d, log nugget, log beta)`.
#[allow(clippy::too_many_arguments)]
pub fn neg_log_lik(
    hyper: &KernelHyper,
    beta: f64,
    g_col: &DVector<f64>,
    w_col: &DVector<f64>,
    lambda: f64,
    theta: &DMatrix<f64>,
    alpha: f64,
    eta: f64,
) -> (f64, Vec<f64>) {
    let v = w_col.map(|w| variance_inflation(w, alpha, eta));
    let prob = LikelihoodProblem {
        theta,
        g: g_col,
        v: &v,
        lambda,
        fit_beta: true,
    };
    let mut x = hyper.log_lengthscales.clone();
    x.push(hyper.log_nugget);
    x.push(beta.ln());
    prob.eval(&x)
}
