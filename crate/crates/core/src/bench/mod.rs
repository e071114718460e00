//! Test functions, missingness generators, baselines and the experiment
//! harness.

mod baselines;
mod experiment;
mod functions;
mod metrics;
mod missingness;

pub use baselines::{baseline_complete_rows, baseline_knn_impute, knn_impute, ColGp};
pub use experiment::{
    evaluate_method, generate_cell, predict_holdout, run_experiment, sample_locations,
    scenario_grid, write_results_csv, CellData, DiagPredictor, ExperimentConfig, Method,
    ResultRow, Scenario,
};
pub use functions::{MnarKind, TestFunction};
pub use metrics::{metrics, z_quantile, Metrics};
pub use missingness::{
    apply_missingness, calibrate_threshold, mask_fraction, mask_values, threshold_mask, Mechanism,
    MissingnessSpec, MnarScheme,
};

/// Bundled desk-scale experiment configuration.
pub const DESK_CONFIG: &str = include_str!("desk.json");
