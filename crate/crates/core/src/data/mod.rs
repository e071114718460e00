//! Simulation datasets with partially observed output.

mod dataset;
mod lhs;
mod standardize;

pub use dataset::{is_missing_token, load_dataset, read_matrix_csv, SimulationDataset};
pub use lhs::latin_hypercube;
pub use standardize::{standardize, StandardizationStats};
