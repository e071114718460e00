//! Principal-component Gaussian process surrogates for simulation output
//! with missing entries, plus Bayesian calibration and a benchmark harness.

pub mod bench;
pub mod calibration;
pub mod data;
pub mod error;
pub mod gp;
pub mod imputation;
pub mod linalg;
pub mod pca;
pub mod rng;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
