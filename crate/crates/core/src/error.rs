use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VamError>;

#[derive(Debug, Error)]
pub enum VamError {
    /// Input data or configuration violates a contract.
    #[error("{0}")]
    Validation(String),

    #[error("missing required column `{column}` in {file}")]
    MissingColumn { file: String, column: String },

    #[error("{file} row {row}, column `{column}`: {message}")]
    BadCell {
        file: String,
        row: usize,
        column: String,
        message: String,
    },

    /// A numerical procedure could not produce a result.
    #[error("{0}")]
    Estimation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

/// Broad failure class, used for exit codes and machine-readable prefixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Estimation,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Validation => 2,
            ErrorKind::Estimation => 3,
            ErrorKind::Io => 4,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Validation => "E_VALIDATION",
            ErrorKind::Estimation => "E_ESTIMATION",
            ErrorKind::Io => "E_IO",
        }
    }
}

impl VamError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            VamError::Validation(_)
            | VamError::MissingColumn { .. }
            | VamError::BadCell { .. }
            | VamError::Config(_) => ErrorKind::Validation,
            VamError::Estimation(_) => ErrorKind::Estimation,
            VamError::Io { .. } => ErrorKind::Io,
            VamError::Csv(e) => match e.kind() {
                csv::ErrorKind::Io(_) => ErrorKind::Io,
                _ => ErrorKind::Validation,
            },
        }
    }

    /// I/O failure tied to a path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VamError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> VamError {
    VamError::Validation(msg.into())
}

pub(crate) fn estimation(msg: impl Into<String>) -> VamError {
    VamError::Estimation(msg.into())
}
