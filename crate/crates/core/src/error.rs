use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record or line in an input file could not be parsed.
    #[error("{source_name}: line {line}: field `{field}`: {message}")]
    Format {
        source_name: String,
        line: usize,
        field: String,
        message: String,
    },

    /// Input data violates a domain invariant (duplicate ids, missing labels, ...).
    #[error("invalid data: {0}")]
    Data(String),

    /// Missing or contradictory configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("vocabulary fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("HTTP request failed with status {status}: {message}")]
    Transport { status: u16, message: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(
        source_name: impl Into<String>,
        line: usize,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            source_name: source_name.into(),
            line,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the environment (files, network) rather than the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Transport { .. })
    }
}
