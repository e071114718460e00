use serde::{Deserialize, Serialize};

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const NUGGET_BOUNDS: (f64, f64) = (1e-10, 1e-2);

/// Squared-exponential ARD hyperparameters, stored on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub log_lengthscales: Vec<f64>,
    pub log_nugget: f64,
}

impl KernelHyper {
    pub fn new(lengthscales: &[f64], nugget: f64) -> Self {
        KernelHyper {
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_nugget: nugget.ln(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|v| v.exp()).collect()
    }

    pub fn nugget(&self) -> f64 {
        self.log_nugget.exp()
    }

    /// Project into the admissible box.
    pub fn clamped(&self) -> Self {
        let (llo, lhi) = (LENGTHSCALE_BOUNDS.0.ln(), LENGTHSCALE_BOUNDS.1.ln());
        KernelHyper {
            log_lengthscales: self.log_lengthscales.iter().map(|v| v.clamp(llo, lhi)).collect(),
            log_nugget: self.log_nugget.clamp(NUGGET_BOUNDS.0.ln(), NUGGET_BOUNDS.1.ln()),
        }
    }
}

/// `exp(-0.5 * sum_l ((a_l - b_l) / ell_l)^2)`.
pub fn correlation(a: &[f64], b: &[f64], hyper: &KernelHyper) -> f64 {
    let s: f64 = a
        .iter()
        .zip(b)
        .zip(&hyper.log_lengthscales)
        .map(|((x, y), ll)| ((x - y) * (-ll).exp()).powi(2))
        .sum();
    (-0.5 * s).exp()
}

/// Inflation term `min(eta, w / (1 - w)^alpha)`.
pub fn variance_inflation(w: f64, alpha: f64, eta: f64) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    if w >= 1.0 {
        return eta;
    }
    (w / (1.0 - w).powf(alpha)).min(eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correlation_cases() {
        let h = KernelHyper::new(&[0.3, 2.0], 1e-8);
        assert_eq!(correlation(&[0.2, 0.4], &[0.2, 0.4], &h), 1.0);
        assert!(correlation(&[0.0, 0.0], &[50.0, 0.0], &h) < 1e-300);
        let h1 = KernelHyper::new(&[0.25], 1e-8);
        assert!((correlation(&[0.1], &[0.35], &h1) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn inflation_cases() {
        assert_eq!(variance_inflation(0.0, 0.3, 10.0), 0.0);
        // 0.5 / 0.5^0.3 = 0.5^0.7
        assert!((variance_inflation(0.5, 0.3, 10.0) - 0.615_572_206_672_458_5).abs() < 1e-12);
        // uncapped 0.9999 / 0.0001^0.3 = 15.8474...
        let uncapped = 0.9999 / 0.0001f64.powf(0.3);
        assert!((uncapped - 15.847).abs() < 1e-3);
        assert_eq!(variance_inflation(0.9999, 0.3, 10.0), 10.0);
        assert_eq!(variance_inflation(1.0, 0.3, 10.0), 10.0);
    }
}
