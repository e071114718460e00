use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Cholesky factorization that retries with escalating diagonal jitter.
///
/// The first retry adds `1e-10 * trace / n`; each further retry multiplies
/// the jitter by ten, for at most `retries` retries.
pub fn cholesky_with_jitter(
    mut a: DMatrix<f64>,
    retries: usize,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = a.nrows();
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let scale = (a.trace() / n.max(1) as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-10 * scale;
    let mut added = 0.0;
    for _ in 0..retries {
        for i in 0..n {
            a[(i, i)] += jitter - added;
        }
        added = jitter;
        if let Some(c) = Cholesky::new(a.clone()) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "{n}x{n} system is not positive definite even after diagonal jitter {added:.3e} \
         (ill-conditioned)"
    )))
}

/// log-determinant from a Cholesky factor.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Solve `L x = b` for the lower factor, returning `x`.
pub fn solve_lower(c: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    let l = c.l_dirty();
    let n = b.len();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Symmetrize in place as `(A + A^T) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Serde adapter storing a matrix as `{rows, cols, data}` with row-major data.
pub(crate) mod matrix_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct RowMajor {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        RowMajor {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rm = RowMajor::deserialize(d)?;
        if rm.data.len() != rm.rows * rm.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                rm.data.len(),
                rm.rows,
                rm.cols
            )));
        }
        Ok(DMatrix::from_row_slice(rm.rows, rm.cols, &rm.data))
    }
}
