//! Experiment driver: configuration, runs, assumption checks and parameter sweeps.

pub mod config;
pub mod error;
pub mod run;
pub mod sweep;
pub mod validate;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
