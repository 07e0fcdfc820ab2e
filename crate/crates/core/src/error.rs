use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the audit toolkit.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl AuditError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        AuditError::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        AuditError::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        AuditError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            AuditError::Config { .. } | AuditError::InvalidInput(_) => 2,
            AuditError::Numeric(_) | AuditError::DimensionMismatch { .. } => 3,
            AuditError::Io { .. } | AuditError::Parse { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, AuditError>;
