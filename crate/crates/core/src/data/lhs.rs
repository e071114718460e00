use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Open01;

use crate::rng;

/// Latin hypercube sample of `n` points in `(0,1)^d`.
///
/// Each column visits every bin `[k/n, (k+1)/n)` exactly once; the position
/// inside a bin is uniform.
pub fn latin_hypercube(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    assert!(n >= 1 && d >= 1, "latin_hypercube needs n >= 1 and d >= 1");
    let mut rng = rng::stream(seed, "latin_hypercube", 0);
    let mut out = DMatrix::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for l in 0..d {
        perm.shuffle(&mut rng);
        for (i, &bin) in perm.iter().enumerate() {
            let u: f64 = rng.sample(Open01);
            out[(i, l)] = ((bin as f64 + u) / n as f64).min(1.0 - f64::EPSILON);
        }
    }
    out
}
