//! Driver for multi-arm simulation experiments and the standalone tools
//! behind the `lmdfl` binary.

pub mod experiment;
pub mod spec;
pub mod tools;

pub use experiment::{load_logs, render_summary, run_experiment, summarize, ArmOutcome, Summary, SummaryRow};
pub use spec::{parse_config, parse_config_str, Arm, ExperimentSpec, OUTPUT_DIR_ENV};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] lmdfl_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// Process exit code: 2 for bad input files, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
