//! Errors carrying the process exit code.

use std::fmt;
use std::process::ExitCode;

use gepower_core::Error;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs: exit 2.
    Usage(String),
    /// A structural check failed: exit 1.
    CheckFailed(String),
    /// The computation itself failed: exit 1.
    Runtime(anyhow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::CheckFailed(_) | CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpec(_)
            | Error::InvalidArgument(_)
            | Error::ProbabilityOutOfRange(_)
            | Error::DimensionMismatch { .. }
            | Error::LpTooLarge { .. }
            | Error::StateSpaceTooLarge { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}
