//! Experiment runner behind the `mindlab` binary: config ingestion, dataset
//! generation, training, ablations, sweeps and the self-check.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;

pub use config::{ExperimentConfig, SweepSpec};

/// Failure of a command, split by exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad input or configuration, unreadable or unwritable files.
    Invalid(String),
    /// Non-finite values during training.
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Diverged(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "error: {m}"),
            CliError::Diverged(m) => write!(f, "diverged: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mindlab::Error> for CliError {
    fn from(e: mindlab::Error) -> Self {
        match e {
            mindlab::Error::Diverged { .. } | mindlab::Error::NonFinite(_) => CliError::Diverged(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}
