#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pcgpwm::data::{latin_hypercube, SimulationDataset};
use pcgpwm::pca::PrincipalSubspace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth three-parameter toy simulator over a scalar location.
pub fn toy(theta: &[f64], x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * (theta[0] + x)).sin() * (1.0 + theta[1])
        + theta[2] * x * x
        + 0.5 * (std::f64::consts::PI * theta[0] * theta[2] * x).cos()
}

pub fn toy_matrix(theta: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(theta.nrows(), m, |i, j| {
        let t: Vec<f64> = theta.row(i).iter().copied().collect();
        toy(&t, j as f64 / (m - 1) as f64)
    })
}

pub fn locations(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, 1, |j, _| j as f64 / (m - 1) as f64)
}

/// Toy dataset with MCAR entries removed from rows past `n_complete`.
pub fn toy_dataset(n: usize, m: usize, rate: f64, n_complete: usize, seed: u64) -> SimulationDataset {
    let theta = latin_hypercube(n, 3, seed);
    let mut f = toy_matrix(&theta, m);
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in n_complete..n {
        for j in 0..m {
            if r.random::<f64>() < rate {
                f[(i, j)] = f64::NAN;
            }
        }
    }
    SimulationDataset::new(theta, locations(m), f).unwrap()
}

/// Random orthonormal basis with descending scales above a floor.
pub fn random_subspace(m: usize, k: usize, seed: u64) -> PrincipalSubspace {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, k, |_, _| r.random::<f64>() - 0.5);
    let q = a.qr().q();
    let mut lambda: Vec<f64> = (0..k).map(|_| 0.5 + 10.0 * r.random::<f64>()).collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    let eps = 0.1 * r.random::<f64>() + 1e-3;
    PrincipalSubspace::new(q, lambda, eps).unwrap()
}

pub fn dense_b(sub: &PrincipalSubspace) -> DMatrix<f64> {
    let m = sub.n_outputs();
    let d = DVector::from_iterator(sub.kappa(), sub.lambda.iter().map(|l| l - sub.epsilon));
    &sub.phi * DMatrix::from_diagonal(&d) * sub.phi.transpose()
        + DMatrix::identity(m, m) * sub.epsilon
}

pub fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}
