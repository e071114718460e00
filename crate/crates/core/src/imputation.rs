//! Conditional-normal imputation of projected coordinates.
//!
//! Each run's output is modeled as `N(0, B)` with the full-rank extension
//! `B = phi (Lambda - eps I) phi^T + eps I`. Every operation here works on
//! the `kappa x kappa` inner system of the Woodbury identity for `B_JJ`;
//! no `m x m` (or `|J| x |J|`) matrix is ever inverted.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::data::SimulationDataset;
use crate::error::{Error, Result};
use crate::linalg::cholesky_with_jitter;
use crate::pca::PrincipalSubspace;

/// Completed projections `g_tilde`, conditional variances `u` and their
/// scaled form `w = u / lambda`, all n x kappa.
#[derive(Debug, Clone)]
pub struct ImputedProjection {
    pub g_tilde: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RowProjection {
    pub g: DVector<f64>,
    /// Conditional variances clamped into `[0, lambda_k]`.
    pub u: DVector<f64>,
    /// Conditional variances before clamping.
    pub u_raw: DVector<f64>,
}

/// Factorized `M = eps (Lambda - eps I)^-1 + phi_J^T phi_J`.
struct InnerSystem {
    phi_j: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl InnerSystem {
    fn new(sub: &PrincipalSubspace, obs: &[usize]) -> Result<Self> {
        if let Some(&bad) = obs.iter().find(|&&j| j >= sub.n_outputs()) {
            return Err(Error::InvalidInput(format!(
                "index {bad} outside {} outputs",
                sub.n_outputs()
            )));
        }
        let phi_j = sub.phi.select_rows(obs);
        let mut m = phi_j.transpose() * &phi_j;
        for k in 0..sub.kappa() {
            m[(k, k)] += sub.epsilon / (sub.lambda[k] - sub.epsilon);
        }
        let (chol, _) = cholesky_with_jitter(m, 3)?;
        Ok(InnerSystem { phi_j, chol })
    }
}

/// `B_JJ^-1 rhs` through
/// `B_JJ^-1 = eps^-1 (I - phi_J M^-1 phi_J^T)`.
pub fn apply_b_submatrix_inverse(
    sub: &PrincipalSubspace,
    obs: &[usize],
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    if obs.is_empty() {
        return Err(Error::InvalidInput("index set is empty".into()));
    }
    if rhs.len() != obs.len() {
        return Err(Error::Dimension(format!(
            "rhs has length {} for {} indices",
            rhs.len(),
            obs.len()
        )));
    }
    let inner = InnerSystem::new(sub, obs)?;
    let t = inner.chol.solve(&(inner.phi_j.transpose() * rhs));
    Ok((rhs - &inner.phi_j * t) / sub.epsilon)
}

/// Conditional mean and variance of the projected coordinates of one run
/// given its observed entries `f_obs` at indices `obs`.
///
/// Uses `phi^T B_{.J} = Lambda phi_J^T`, so that
/// `g = Lambda phi_J^T B_JJ^-1 f_J` and
/// `U = Lambda - Lambda phi_J^T B_JJ^-1 phi_J Lambda`, where
/// `phi_J^T B_JJ^-1 = (Lambda - eps I)^-1 M^-1 phi_J^T`.
pub fn project_row(sub: &PrincipalSubspace, f_obs: &[f64], obs: &[usize]) -> Result<RowProjection> {
    let k = sub.kappa();
    let m = sub.n_outputs();
    if f_obs.len() != obs.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} indices",
            f_obs.len(),
            obs.len()
        )));
    }
    let lambda = DVector::from_column_slice(&sub.lambda);
    if obs.is_empty() {
        return Ok(RowProjection {
            g: DVector::zeros(k),
            u: lambda.clone(),
            u_raw: lambda,
        });
    }
    if obs.len() == m && obs.iter().enumerate().all(|(a, &b)| a == b) {
        // B_JJ = B: conditioning on everything recovers the projection exactly
        return Ok(RowProjection {
            g: sub.project(f_obs),
            u: DVector::zeros(k),
            u_raw: DVector::zeros(k),
        });
    }

    let inner = InnerSystem::new(sub, obs)?;
    let f_j = DVector::from_column_slice(f_obs);
    // (Lambda - eps)^-1 M^-1 phi_J^T f_J, then scale by Lambda
    let shrink = |k: usize| sub.lambda[k] / (sub.lambda[k] - sub.epsilon);
    let t = inner.chol.solve(&(inner.phi_j.transpose() * f_j));
    let g = DVector::from_fn(k, |c, _| shrink(c) * t[c]);

    let gram = inner.phi_j.transpose() * &inner.phi_j;
    let sol = inner.chol.solve(&gram);
    let u_raw = DVector::from_fn(k, |c, _| {
        sub.lambda[c] - shrink(c) * sol[(c, c)] * sub.lambda[c]
    });
    let u = DVector::from_fn(k, |c, _| u_raw[c].clamp(0.0, sub.lambda[c]));
    Ok(RowProjection { g, u, u_raw })
}

/// Project every run of a standardized dataset. Rows are independent.
pub fn impute_all(ds: &SimulationDataset, sub: &PrincipalSubspace) -> Result<ImputedProjection> {
    if ds.n_outputs() != sub.n_outputs() {
        return Err(Error::Dimension(format!(
            "dataset has {} outputs, subspace {}",
            ds.n_outputs(),
            sub.n_outputs()
        )));
    }
    let n = ds.n_runs();
    let k = sub.kappa();
    let rows: Vec<RowProjection> = (0..n)
        .into_par_iter()
        .map(|i| {
            let obs = ds.observed_indices(i)?;
            let vals: Vec<f64> = obs.iter().map(|&j| ds.responses()[(i, j)]).collect();
            project_row(sub, &vals, &obs)
        })
        .collect::<Result<_>>()?;
    let mut g_tilde = DMatrix::zeros(n, k);
    let mut u = DMatrix::zeros(n, k);
    let mut w = DMatrix::zeros(n, k);
    for (i, r) in rows.iter().enumerate() {
        for c in 0..k {
            g_tilde[(i, c)] = r.g[c];
            u[(i, c)] = r.u[c];
            w[(i, c)] = r.u[c] / sub.lambda[c];
        }
    }
    Ok(ImputedProjection { g_tilde, u, w })
}
