use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration. `field` is the dotted config key, e.g. `loss.tau`.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("encoder error: {0}")]
    Encoder(String),

    #[error("backend error: {0}")]
    Backend(String),

    /// LLM output could not be parsed into a single candidate. The raw text
    /// is preserved for the audit trail.
    #[error("no parseable samples in generated response ({skipped} malformed)")]
    Generation { skipped: usize, raw: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 i/o, 4 backend, 5 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io { .. } | Error::Record { .. } | Error::EmptyDataset | Error::Checkpoint(_) => 3,
            Error::Encoder(_) | Error::Backend(_) | Error::Generation { .. } => 4,
            Error::Numerical(_) => 5,
            Error::InvalidInput(_) | Error::Shape(_) | Error::UndefinedMetric(_) => 1,
            Error::Fold { source, .. } => source.exit_code(),
        }
    }
}
