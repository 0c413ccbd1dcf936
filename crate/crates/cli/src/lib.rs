//! Experiment runner for surrogate-posterior Langevin sampling: TOML
//! configuration, initialisers, the cell pipeline and its CSV/JSON outputs.

pub mod config;
pub mod error;
pub mod experiment;
pub mod init;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, Stages};
