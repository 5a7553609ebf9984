//! Experiment harness around `pcis-core`: TOML experiment configs, versioned
//! CSV artifacts, and the commands behind the `pcis` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::{Experiment, ExperimentConfig};
pub use error::{PcisError, Result};
