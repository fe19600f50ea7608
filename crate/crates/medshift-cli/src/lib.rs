//! Command-line surface for the estimation engine: configuration binding,
//! CSV ingestion, the estimate/simulate/oracle commands, and report
//! rendering. All numerics live in `medshift-core`; this crate is IO only.

pub mod commands;
pub mod config;
pub mod loader;
pub mod output;
pub mod plots;

/// Top-level failure classes, mapped to process exit codes: configuration
/// and schema problems exit 2, estimation problems exit 3.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("estimation error: {0}")]
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl From<medshift_core::Error> for CliError {
    fn from(e: medshift_core::Error) -> Self {
        match e {
            medshift_core::Error::Invalid(msg) => CliError::Config(msg.to_string()),
            medshift_core::Error::Estimation(msg) => CliError::Estimation(msg.to_string()),
        }
    }
}
