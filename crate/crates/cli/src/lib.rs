//! Experiment runner: configuration files, training, robustness sweeps and
//! trace reports on top of the `spota` library.

pub mod commands;
pub mod config;
pub mod error;

pub use config::Config;
pub use error::{CliError, Result};
