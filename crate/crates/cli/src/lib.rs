//! Command-line front end for `sphcov`: synthetic data, configuration,
//! chain execution and plot-ready CSV output.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};
