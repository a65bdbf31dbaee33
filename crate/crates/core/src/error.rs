use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(
        "degenerate alpha vector{}: sum of magnitudes is zero",
        class.map(|c| format!(" for class {c}")).unwrap_or_default()
    )]
    DegenerateAlpha { class: Option<usize> },

    #[error("data error: {0}")]
    Data(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Training {
        epoch: usize,
        batch: usize,
        msg: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad category, used to pick a process exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Shape { .. } | Error::Index { .. } | Error::Config(_) | Error::Data(_) => {
                ErrorKind::Config
            }
            Error::Format { .. } | Error::Integrity(_) | Error::Io { .. } | Error::Json { .. } => {
                ErrorKind::Io
            }
            Error::Numeric(_) | Error::DegenerateAlpha { .. } | Error::Training { .. } => {
                ErrorKind::Numeric
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
