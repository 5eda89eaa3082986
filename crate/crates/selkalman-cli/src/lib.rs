//! Library surface of the experiment driver: configuration, file formats,
//! the run manifest, and the `simulate` / `invert` / `report` commands.

pub mod config;
pub mod error;
pub mod fields;
pub mod manifest;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use runner::{cmd_invert, cmd_report, cmd_simulate, ModelKind, RunContext};
