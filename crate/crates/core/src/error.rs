//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes disagree along a named axis.
    #[error("dimension mismatch in {op}: axis `{axis}` expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("no head for task {0}")]
    MissingHead(u32),

    /// A configuration value failed validation. `field` names the offending entry.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// An operation was called in a state that does not permit it.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("channel {channel} is constant (std = 0)")]
    ConstantChannel { channel: usize },

    /// Malformed file contents. `line` is 1-based.
    #[error("format error in {path} at line {line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },

    /// Non-finite or otherwise invalid numeric cell. `line` is 1-based.
    #[error("data error in {path} at line {line}: {reason}")]
    Data {
        path: String,
        line: usize,
        reason: String,
    },

    /// Artifacts from different pipeline runs were combined.
    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io { .. } => 3,
            Error::Provenance(_) => 4,
            Error::Numeric(_) | Error::UndefinedMetric(_) => 5,
            Error::Format { .. } | Error::Data { .. } => 6,
            _ => 1,
        }
    }
}
