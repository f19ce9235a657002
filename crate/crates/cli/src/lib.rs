//! Subcommands of the `cyclesum` binary.

pub mod args;
pub mod commands;
pub mod config;

use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Core(#[from] cyclesum_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Verification(_) => EXIT_VERIFY,
            CliError::Core(cyclesum_core::Error::NonFinite { .. }) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_CONFIG,
        }
    }
}
