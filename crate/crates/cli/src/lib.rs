//! Experiment driver for the kernelized classification layer.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;

pub use commands::Run;
pub use config::Config;
pub use error::{CliError, CliResult};
