use std::fmt;

use speechprune_core::harness::HarnessError;
use speechprune_core::{BundleError, PruneError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, settings or flag combinations.
    Usage(String),
    /// Unreadable or malformed input data, or an output that cannot be written.
    Data { kind: &'static str, message: String },
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } => EXIT_DATA,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    pub fn io(context: impl fmt::Display, err: std::io::Error) -> Self {
        CliError::Data { kind: "io", message: format!("{context}: {err}") }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "error[usage]: {msg}"),
            CliError::Data { kind, message } => write!(f, "error[{kind}]: {message}"),
            CliError::Internal(e) => write!(f, "internal error: {e:#}"),
        }
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        CliError::Data { kind: e.kind(), message: e.to_string() }
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::InvalidConfig(msg) => CliError::Usage(msg),
            other => CliError::Internal(other.into()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidSpec(_) | HarnessError::InvalidExperiment(_) => CliError::Usage(e.to_string()),
            HarnessError::Prune(p) => p.into(),
            HarnessError::Bundle(b) => b.into(),
            other => CliError::Internal(other.into()),
        }
    }
}
