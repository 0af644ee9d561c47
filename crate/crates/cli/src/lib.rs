//! Command-line experiments and demos over `hcsync`.

use thiserror::Error;

pub mod app;
pub mod commands;
pub mod config;

pub use commands::{cmd_experiment, cmd_keyexchange, cmd_roundtrip, Experiment, RoundtripSummary};
pub use config::RunConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 2,
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}
