//! Experiment harness: configuration, pipelines, metrics and the commands
//! behind the `kamal` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod pipeline;

pub use config::{Config, Settings};
pub use error::{CliError, Result};
