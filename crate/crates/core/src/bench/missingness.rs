use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Mcar => "MCAR",
            Mechanism::Mar => "MAR",
            Mechanism::Mnar => "MNAR",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MCAR" => Ok(Mechanism::Mcar),
            "MAR" => Ok(Mechanism::Mar),
            "MNAR" => Ok(Mechanism::Mnar),
            _ => Err(Error::InvalidInput(format!("unknown missingness mechanism {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    pub rate: f64,
    pub seed: u64,
}

/// Not-at-random scheme and its inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum MnarScheme {
    /// Missing when the value exceeds `c * reference[j]`, with `c` chosen
    /// to hit the target rate.
    Threshold { reference: Vec<f64> },
    /// Per-column logistic model in the standardized value itself.
    Logistic,
}

/// Missingness mask (`true` = missing) for an `n x m` value matrix.
pub fn apply_missingness(
    values: &DMatrix<f64>,
    spec: &MissingnessSpec,
    scheme: &MnarScheme,
) -> Result<DMatrix<bool>> {
    let (n, m) = values.shape();
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::InvalidInput(format!("missing rate {} not in [0, 1)", spec.rate)));
    }
    if spec.rate == 0.0 {
        return Ok(DMatrix::from_element(n, m, false));
    }
    let mut rng = rng::stream(spec.seed, "missingness", 0);
    match spec.mechanism {
        Mechanism::Mcar => Ok(DMatrix::from_fn(n, m, |_, _| rng.random::<f64>() < spec.rate)),
        Mechanism::Mar => {
            let size = m.div_ceil(2);
            let mut cols: Vec<usize> = (0..m).collect();
            cols.shuffle(&mut rng);
            let subset = &cols[..size];
            let p = spec.rate * m as f64 / size as f64;
            if p >= 1.0 {
                return Err(Error::InvalidInput(format!(
                    "MAR on {size} of {m} columns reaches at most rate {:.3}",
                    size as f64 / m as f64
                )));
            }
            let mut mask = DMatrix::from_element(n, m, false);
            for j in 0..m {
                let on = subset.contains(&j);
                for i in 0..n {
                    // draw for every entry so the stream does not depend on the subset
                    let u = rng.random::<f64>();
                    mask[(i, j)] = on && u < p;
                }
            }
            Ok(mask)
        }
        Mechanism::Mnar => match scheme {
            MnarScheme::Threshold { reference } => {
                let c = calibrate_threshold(values, reference, spec.rate)?;
                threshold_mask(values, reference, c)
            }
            MnarScheme::Logistic => logistic_mask(values, spec.rate, &mut rng),
        },
    }
}

/// Entries with `value > c * reference[j]`.
pub fn threshold_mask(values: &DMatrix<f64>, reference: &[f64], c: f64) -> Result<DMatrix<bool>> {
    let (n, m) = values.shape();
    if reference.len() != m {
        return Err(Error::Dimension(format!(
            "{} reference values for {m} columns",
            reference.len()
        )));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| values[(i, j)] > c * reference[j]))
}

/// Smallest `c` that masks `round(rate * n * m)` entries: an order statistic
/// of the ratios `value / reference[j]`.
pub fn calibrate_threshold(values: &DMatrix<f64>, reference: &[f64], rate: f64) -> Result<f64> {
    let (n, m) = values.shape();
    if reference.len() != m {
        return Err(Error::Dimension(format!(
            "{} reference values for {m} columns",
            reference.len()
        )));
    }
    if reference.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidInput(
            "threshold missingness needs positive reference values".into(),
        ));
    }
    let mut ratios: Vec<f64> = (0..m)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .map(|(i, j)| values[(i, j)] / reference[j])
        .collect();
    ratios.sort_by(f64::total_cmp);
    let target = (rate * ratios.len() as f64).round() as usize;
    if target == 0 {
        return Ok(f64::INFINITY);
    }
    // everything strictly above ratios[len - target - 1] is masked
    let c = ratios[ratios.len() - target - 1];
    let masked = ratios.iter().filter(|r| **r > c).count();
    if masked == 0 {
        return Err(Error::InvalidInput(format!(
            "threshold cannot reach rate {rate}: values are tied at the cut"
        )));
    }
    Ok(c)
}

fn logistic_mask(values: &DMatrix<f64>, rate: f64, rng: &mut impl Rng) -> Result<DMatrix<bool>> {
    let (n, m) = values.shape();
    let coef: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let mut z = DMatrix::zeros(n, m);
    for j in 0..m {
        let col = values.column(j);
        let mean = col.mean();
        let sd = col.variance().sqrt();
        for i in 0..n {
            z[(i, j)] = if sd > 0.0 { (values[(i, j)] - mean) / sd } else { 0.0 };
        }
    }
    let mean_prob = |a: f64| -> f64 {
        let mut s = 0.0;
        for j in 0..m {
            for i in 0..n {
                s += sigmoid(a + coef[j] * z[(i, j)]);
            }
        }
        s / (n * m) as f64
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    let (plo, phi) = (mean_prob(lo), mean_prob(hi));
    if !(plo <= rate && rate <= phi) {
        return Err(Error::InvalidInput(format!(
            "logistic intercept cannot reach rate {rate}; achievable range [{plo:.3e}, {phi:.3}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    Ok(DMatrix::from_fn(n, m, |i, j| {
        rng.random::<f64>() < sigmoid(a + coef[j] * z[(i, j)])
    }))
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Copy of `values` with masked entries set to `NaN`.
pub fn mask_values(values: &DMatrix<f64>, mask: &DMatrix<bool>) -> DMatrix<f64> {
    values.zip_map(mask, |v, miss| if miss { f64::NAN } else { v })
}

pub fn mask_fraction(mask: &DMatrix<bool>) -> f64 {
    mask.iter().filter(|b| **b).count() as f64 / mask.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, m, |i, j| 1.0 + ((i * 7 + j * 13) % 101) as f64 + 0.01 * j as f64)
    }

    fn spec(mechanism: Mechanism, rate: f64) -> MissingnessSpec {
        MissingnessSpec {
            mechanism,
            rate,
            seed: 42,
        }
    }

    #[test]
    fn zero_rate_masks_nothing() {
        let v = grid(20, 5);
        for mech in [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar] {
            let mask = apply_missingness(&v, &spec(mech, 0.0), &MnarScheme::Logistic).unwrap();
            assert!(mask.iter().all(|b| !b));
        }
    }

    #[test]
    fn infinite_threshold_masks_nothing() {
        let v = grid(20, 5);
        let mask = threshold_mask(&v, &[1.0; 5], f64::INFINITY).unwrap();
        assert!(mask.iter().all(|b| !b));
    }

    #[test]
    fn mcar_concentration() {
        let v = DMatrix::zeros(2500, 15);
        let mask = apply_missingness(&v, &spec(Mechanism::Mcar, 0.05), &MnarScheme::Logistic)
            .unwrap();
        let f = mask_fraction(&mask);
        assert!((0.04..=0.06).contains(&f), "{f}");
    }

    #[test]
    fn mar_uses_half_the_columns() {
        let v = DMatrix::zeros(400, 15);
        let mask =
            apply_missingness(&v, &spec(Mechanism::Mar, 0.25), &MnarScheme::Logistic).unwrap();
        let touched = (0..15).filter(|&j| mask.column(j).iter().any(|b| *b)).count();
        assert_eq!(touched, 8);
        let f = mask_fraction(&mask);
        assert!((f - 0.25).abs() < 0.05 * 0.25 * 4.0, "{f}");
    }

    #[test]
    fn threshold_hits_rate_and_masks_large_values() {
        let v = grid(200, 10);
        let reference = vec![50.0; 10];
        let mask = apply_missingness(
            &v,
            &spec(Mechanism::Mnar, 0.05),
            &MnarScheme::Threshold {
                reference: reference.clone(),
            },
        )
        .unwrap();
        let f = mask_fraction(&mask);
        assert!((f - 0.05).abs() <= 0.01, "{f}");
        let max_kept = mask_values(&v, &mask).iter().filter(|x| !x.is_nan()).fold(0.0, |a: f64, b| a.max(*b));
        let min_masked = v.zip_map(&mask, |x, b| if b { x } else { f64::INFINITY }).min();
        assert!(max_kept <= min_masked);
    }

    #[test]
    fn logistic_hits_rate() {
        let v = grid(300, 15);
        for rate in [0.01, 0.05, 0.25] {
            let mask =
                apply_missingness(&v, &spec(Mechanism::Mnar, rate), &MnarScheme::Logistic).unwrap();
            let f = mask_fraction(&mask);
            assert!((f - rate).abs() <= 0.2 * rate, "rate {rate}: {f}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let v = grid(50, 6);
        let a = apply_missingness(&v, &spec(Mechanism::Mnar, 0.1), &MnarScheme::Logistic).unwrap();
        let b = apply_missingness(&v, &spec(Mechanism::Mnar, 0.1), &MnarScheme::Logistic).unwrap();
        assert_eq!(a, b);
    }
}
