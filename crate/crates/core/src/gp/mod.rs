//! Component Gaussian processes with imputation-inflated covariance and the
//! assembled multivariate surrogate.

mod component;
mod kernel;
pub mod lbfgs;
mod likelihood;
mod pcgp;
mod surrogate;

pub use component::{fit_component, predict_component, ComponentGP, FitOptions};
pub use kernel::{correlation, variance_inflation, KernelHyper, LENGTHSCALE_BOUNDS, NUGGET_BOUNDS};
pub use likelihood::{build_adjusted_corr, neg_log_lik, LikelihoodProblem, BETA_BOUNDS};
pub use pcgp::PlainPcgp;
pub use surrogate::{
    fit_surrogate, fit_surrogate_with_hypers, ComponentHyper, ComponentReport, FitReport,
    LowRankPrediction, Prediction, Surrogate, SurrogateConfig,
};
