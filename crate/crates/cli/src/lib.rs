//! Command-line pipeline: simulate a thermal-box ensemble, calibrate a model
//! variant against an observation, attribute its discrepancy to boundary
//! inputs and compare variants by Bayes factor.

pub mod archive;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod manifest;
pub mod report;

pub use commands::{cmd_analyze, cmd_calibrate, cmd_compare, cmd_simulate};
pub use config::LoadedConfig;
pub use error::{CliError, CliResult};
