use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("need at least {k} students for {k} folds, found {students}")]
    NotEnoughStudents { students: usize, k: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("AUC is undefined when only one class is present")]
    UndefinedAuc,

    #[error("malformed model file at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("unsupported model version {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    /// Short machine-readable error class, stable across releases.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::InvalidInput(_) => "invalid-input",
            Error::NotEnoughStudents { .. } => "not-enough-students",
            Error::EmptyDataset => "empty-dataset",
            Error::UndefinedAuc => "undefined-auc",
            Error::Format { .. } => "model-format",
            Error::VersionMismatch { .. } => "model-version",
        }
    }
}
