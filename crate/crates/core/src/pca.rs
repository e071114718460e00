//! Principal subspace estimation for complete and incomplete output.
//!
//! The scales `lambda` are the squared singular values of the standardized
//! response matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, matrix_serde};

/// Orthonormal basis `phi` (m x kappa), scales and residual floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalSubspace {
    #[serde(with = "matrix_serde")]
    pub phi: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub epsilon: f64,
}

impl PrincipalSubspace {
    pub fn new(phi: DMatrix<f64>, lambda: Vec<f64>, epsilon: f64) -> Result<Self> {
        let sub = PrincipalSubspace { phi, lambda, epsilon };
        sub.validate()?;
        Ok(sub)
    }

    pub fn kappa(&self) -> usize {
        self.lambda.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.phi.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kappa();
        if k == 0 || self.phi.ncols() != k {
            return Err(Error::Dimension(format!(
                "basis has {} columns but {} scales",
                self.phi.ncols(),
                k
            )));
        }
        if !(self.epsilon > 0.0) || self.lambda.iter().any(|&l| !(l > self.epsilon)) {
            return Err(Error::InvalidInput(format!(
                "need lambda_k > epsilon > 0 (epsilon = {:e}, min lambda = {:e})",
                self.epsilon,
                self.lambda.iter().cloned().fold(f64::INFINITY, f64::min)
            )));
        }
        if self.lambda.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("scales must be descending".into()));
        }
        let gram = self.phi.transpose() * &self.phi;
        let dev = (gram - DMatrix::identity(k, k)).amax();
        if dev > 1e-8 {
            return Err(Error::Numerical(format!("basis is not orthonormal ({dev:e})")));
        }
        Ok(())
    }

    /// `phi^T f` for a complete standardized output vector.
    pub fn project(&self, f: &[f64]) -> DVector<f64> {
        let k = self.kappa();
        let mut g = DVector::zeros(k);
        for c in 0..k {
            g[c] = self
                .phi
                .column(c)
                .iter()
                .zip(f)
                .map(|(p, v)| p * v)
                .sum::<f64>();
        }
        g
    }

    pub fn reconstruct(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.phi * g
    }
}

/// Eigen-spectrum of a complete matrix: right singular vectors in
/// descending order with their squared singular values.
struct Spectrum {
    vectors: DMatrix<f64>,
    sq: Vec<f64>,
}

fn spectrum(f: &DMatrix<f64>) -> Result<Spectrum> {
    let (n, m) = f.shape();
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("empty response matrix".into()));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "matrix passed to the SVD contains missing or non-finite entries".into(),
        ));
    }
    let svd = f.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut vectors = DMatrix::zeros(m, order.len());
    let mut sq = Vec::with_capacity(order.len());
    for (c, &k) in order.iter().enumerate() {
        let mut col = v_t.row(k).transpose();
        // largest-magnitude entry positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(c, &col);
        sq.push(svd.singular_values[k].powi(2));
    }
    Ok(Spectrum { vectors, sq })
}

/// Residual floor: mean of the discarded scales, clamped into
/// `[1e-12 * lambda_1, 0.9 * lambda_kappa]`.
pub fn residual_epsilon(all_sq_singular_values: &[f64], kappa: usize) -> f64 {
    let lead = all_sq_singular_values[0];
    let last = all_sq_singular_values[kappa - 1];
    let lower = 1e-12 * lead;
    let upper = 0.9 * last;
    let discarded = &all_sq_singular_values[kappa.min(all_sq_singular_values.len())..];
    let eps = if discarded.is_empty() {
        lower
    } else {
        (discarded.iter().sum::<f64>() / discarded.len() as f64).max(lower)
    };
    eps.min(upper)
}

fn select_kappa(sq: &[f64], variance_fraction: f64) -> usize {
    let total: f64 = sq.iter().sum();
    let target = variance_fraction * total * (1.0 - 1e-12);
    let numerically_nonzero = sq.iter().take_while(|&&s| s > 1e-13 * sq[0]).count().max(1);
    let mut cum = 0.0;
    for (k, s) in sq.iter().enumerate() {
        cum += s;
        if cum >= target {
            return (k + 1).min(numerically_nonzero);
        }
    }
    numerically_nonzero
}

/// Principal subspace of a complete standardized matrix.
///
/// `kappa` is the smallest count whose cumulative share of the squared
/// singular values reaches `variance_fraction`.
pub fn svd_subspace(f_std: &DMatrix<f64>, variance_fraction: f64) -> Result<PrincipalSubspace> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance fraction must lie in (0, 1], got {variance_fraction}"
        )));
    }
    let spec = spectrum(f_std)?;
    if spec.sq.is_empty() || !(spec.sq[0] > 0.0) {
        return Err(Error::InvalidInput("response matrix has rank zero".into()));
    }
    let kappa = select_kappa(&spec.sq, variance_fraction);
    let epsilon = residual_epsilon(&spec.sq, kappa);
    PrincipalSubspace::new(
        spec.vectors.columns(0, kappa).into_owned(),
        spec.sq[..kappa].to_vec(),
        epsilon,
    )
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EmConfig {
    pub variance_fraction: f64,
    /// Regularizer of the conditional-mean fill.
    pub eps_m: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            variance_fraction: 0.995,
            eps_m: 1e-5,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub subspace: PrincipalSubspace,
    /// Input with missing entries replaced by their final conditional means.
    /// Rows with no observation are left at zero.
    pub completed: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// EM estimate of the principal subspace under missingness.
///
/// Missing entries start at their column means; each iteration takes the
/// SVD of the completed matrix and refills every missing block with its
/// conditional mean under `phi (Lambda - eps I) phi^T + r I`, where `r` is
/// the larger of `eps_m` and the residual floor `eps`. Runs with no observed
/// entry are left out of the decomposition.
pub fn em_subspace(f_std: &DMatrix<f64>, cfg: &EmConfig) -> Result<EmOutcome> {
    let (n, m) = f_std.shape();
    let mut completed = f_std.clone();
    for j in 0..m {
        let avail: Vec<f64> = f_std.column(j).iter().copied().filter(|v| !v.is_nan()).collect();
        if avail.is_empty() {
            return Err(Error::InvalidInput(format!("column {j} has no available entries")));
        }
        let mean = avail.iter().sum::<f64>() / avail.len() as f64;
        for i in 0..n {
            if completed[(i, j)].is_nan() {
                completed[(i, j)] = mean;
            }
        }
    }

    let observed: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..m).filter(|&j| !f_std[(i, j)].is_nan()).collect())
        .collect();
    let used: Vec<usize> = (0..n).filter(|&i| !observed[i].is_empty()).collect();
    for i in 0..n {
        if observed[i].is_empty() {
            completed.row_mut(i).fill(0.0);
        }
    }
    let partial: Vec<usize> = used
        .iter()
        .copied()
        .filter(|&i| observed[i].len() < m)
        .collect();

    let decompose = |c: &DMatrix<f64>| -> Result<PrincipalSubspace> {
        if used.len() == n {
            svd_subspace(c, cfg.variance_fraction)
        } else {
            svd_subspace(&c.select_rows(&used), cfg.variance_fraction)
        }
    };

    let mut subspace = decompose(&completed)?;
    if partial.is_empty() {
        return Ok(EmOutcome {
            subspace,
            completed,
            iterations: 0,
            converged: true,
        });
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let fills: Vec<(usize, Vec<(usize, f64)>)> = partial
            .par_iter()
            .map(|&i| {
                let fill = conditional_fill(&subspace, f_std, i, &observed[i], cfg.eps_m)?;
                Ok((i, fill))
            })
            .collect::<Result<_>>()?;
        let mut change: f64 = 0.0;
        for (i, fill) in fills {
            for (j, v) in fill {
                change = change.max((completed[(i, j)] - v).abs());
                completed[(i, j)] = v;
            }
        }
        subspace = decompose(&completed)?;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EM subspace estimate did not converge in {} iterations", cfg.max_iter);
    }
    Ok(EmOutcome {
        subspace,
        completed,
        iterations,
        converged,
    })
}

/// Conditional mean of the missing block of row `i` (E step).
fn conditional_fill(
    sub: &PrincipalSubspace,
    f: &DMatrix<f64>,
    i: usize,
    obs: &[usize],
    eps_m: f64,
) -> Result<Vec<(usize, f64)>> {
    let k = sub.kappa();
    let m = sub.n_outputs();
    let a = sub.phi.select_rows(obs);
    let f_j = DVector::from_iterator(obs.len(), obs.iter().map(|&j| f[(i, j)]));
    // D A^T (A D A^T + reg I)^-1 = (A^T A + reg D^-1)^-1 A^T
    let mut inner = a.transpose() * &a;
    // eps_m alone is too weak once lambda carries the run count: components
    // barely loaded on J get unbounded gain and the fill diverges
    let reg = eps_m.max(sub.epsilon);
    for c in 0..k {
        inner[(c, c)] += reg / (sub.lambda[c] - sub.epsilon);
    }
    let (chol, _) = cholesky_with_jitter(inner, 3)?;
    let coef = chol.solve(&(a.transpose() * f_j));
    let mut is_obs = vec![false; m];
    obs.iter().for_each(|&j| is_obs[j] = true);
    Ok((0..m)
        .filter(|&j| !is_obs[j])
        .map(|j| (j, (sub.phi.row(j) * &coef)[0]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn exact_rank_two_is_recovered() {
        let f = randn(30, 2, 1) * randn(2, 8, 2);
        let sub = svd_subspace(&f, 0.99).unwrap();
        assert_eq!(sub.kappa(), 2);
        let recon = &f * &sub.phi * sub.phi.transpose();
        assert!((recon - &f).amax() < 1e-10);
    }

    #[test]
    fn identity_spectrum() {
        let sub = svd_subspace(&DMatrix::identity(3, 3), 1.0).unwrap();
        assert_eq!(sub.kappa(), 3);
        for l in &sub.lambda {
            assert!((l - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_matrix_is_rank_zero() {
        assert!(svd_subspace(&DMatrix::zeros(4, 3), 0.9).is_err());
    }

    #[test]
    fn matches_eigen_oracle_up_to_sign() {
        let f = randn(50, 15, 3);
        let sub = svd_subspace(&f, 1.0).unwrap();
        let eig = SymmetricEigen::new(f.transpose() * &f);
        let mut order: Vec<usize> = (0..15).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        assert_eq!(sub.kappa(), 15);
        for (c, &k) in order.iter().enumerate() {
            assert!((sub.lambda[c] - eig.eigenvalues[k]).abs() < 1e-9 * eig.eigenvalues[k]);
            let a = sub.phi.column(c);
            let b = eig.eigenvectors.column(k);
            let dot = a.dot(&b);
            assert!((dot.abs() - 1.0).abs() < 1e-8, "column {c}: |dot| = {}", dot.abs());
        }
    }

    #[test]
    fn reconstruction_bound() {
        let f = randn(40, 12, 4);
        for frac in [0.5, 0.8, 0.95] {
            let sub = svd_subspace(&f, frac).unwrap();
            let resid = (&f - &f * &sub.phi * sub.phi.transpose()).norm_squared();
            assert!(resid <= (1.0 - frac) * f.norm_squared() + 1e-9);
        }
    }

    #[test]
    fn sign_convention() {
        let sub = svd_subspace(&randn(20, 6, 5), 1.0).unwrap();
        for c in 0..sub.kappa() {
            let col = sub.phi.column(c);
            assert!(col[col.iamax()] > 0.0);
        }
    }

    #[test]
    fn epsilon_rule() {
        assert_eq!(residual_epsilon(&[4.0, 2.0, 1.0, 1.0], 2), 1.0);
        assert_eq!(residual_epsilon(&[4.0, 2.0], 2), 4e-12);
        assert!((residual_epsilon(&[4.0, 2.0, 1.9, 1.9], 2) - 1.8).abs() < 1e-15);
    }

    #[test]
    fn em_on_complete_data_is_svd() {
        let f = randn(25, 7, 6);
        let em = em_subspace(&f, &EmConfig::default()).unwrap();
        let svd = svd_subspace(&f, 0.995).unwrap();
        assert_eq!(em.subspace, svd);
        assert_eq!(em.iterations, 0);
    }

    #[test]
    fn em_fills_rank_one_entry() {
        let a = DVector::from_fn(12, |i, _| 1.0 + 0.3 * i as f64);
        let b = DVector::from_fn(6, |j, _| (-1.0f64).powi(j as i32) * (0.5 + 0.2 * j as f64));
        let full = &a * b.transpose();
        let mut f = full.clone();
        f[(4, 2)] = f64::NAN;
        let cfg = EmConfig {
            variance_fraction: 0.999,
            tol: 1e-10,
            max_iter: 2000,
            ..EmConfig::default()
        };
        let em = em_subspace(&f, &cfg).unwrap();
        assert!(em.converged);
        assert_eq!(em.subspace.kappa(), 1);
        let got = em.completed[(4, 2)];
        assert!((got - full[(4, 2)]).abs() < 1e-4, "filled {got}, truth {}", full[(4, 2)]);
    }

    #[test]
    fn em_needs_one_entry_per_column() {
        let mut f = randn(5, 3, 7);
        f.column_mut(1).fill(f64::NAN);
        assert!(em_subspace(&f, &EmConfig::default()).is_err());
    }
}
