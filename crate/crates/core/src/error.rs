use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checksum mismatch in {path}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { path: String, stored: u32, computed: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },

    #[error("config error at {location}: {reason}")]
    Config { location: String, reason: String },

    #[error("dataset not found: {0}")]
    DatasetNotFound(PathBuf),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("mode mismatch: session is {session}, command is {command}")]
    ModeMismatch { session: &'static str, command: &'static str },

    #[error("session expired: {0}")]
    SessionExpired(String),

    #[error("perturbed panel left the workspace after {0} tries")]
    PerturbationRejected(usize),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid { what, reason: reason.into() }
    }

    pub fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { what, expected, got }
    }

    /// Short category label used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "contract violation",
            Error::Invalid { .. } => "invalid input",
            Error::NonFinite(_) => "numerical failure",
            Error::Checksum { .. } | Error::Corrupt { .. } => "corrupt file",
            Error::Config { .. } => "malformed config",
            Error::DatasetNotFound(_) => "dataset not found",
            Error::EmptyDataset(_) => "empty dataset",
            Error::Checkpoint(_) => "incompatible checkpoint",
            Error::ModeMismatch { .. } => "mode mismatch",
            Error::SessionExpired(_) => "session expired",
            Error::PerturbationRejected(_) => "invalid scene",
            Error::Protocol(_) => "protocol error",
            Error::Io(_) => "io error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
