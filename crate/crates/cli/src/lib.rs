//! Command-line experiments for graph convolutional recurrent networks.

pub mod arch;
pub mod commands;
pub mod config;

use std::fmt;

pub use arch::{model_spec, Architecture};
pub use commands::{
    cmd_count_params, cmd_eval, cmd_experiment, cmd_generate, cmd_train, format_param_table, generate_dataset,
    Aggregate, ExperimentReport, ResultRow, TrainSummary,
};
pub use config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments.
    Config(String),
    Core(gcrnn::Error),
    Io(std::io::Error),
}

impl CliError {
    /// Process exit status: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub(crate) fn context(self, what: impl fmt::Display) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Core(gcrnn::Error::Numerical(m)) => CliError::Core(gcrnn::Error::Numerical(format!("{what}: {m}"))),
            CliError::Core(e) => CliError::Core(gcrnn::Error::InvalidInput(format!("{what}: {e}"))),
            CliError::Io(e) => CliError::Io(std::io::Error::new(e.kind(), format!("{what}: {e}"))),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Core(e) => e.fmt(f),
            CliError::Io(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gcrnn::Error> for CliError {
    fn from(e: gcrnn::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
