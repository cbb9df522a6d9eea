use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Problem found while reading a per-video feature blob.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadIssue {
    DimensionMismatch { expected_bytes: u64, got_bytes: u64 },
    NonFinite,
}

impl fmt::Display for LoadIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadIssue::DimensionMismatch {
                expected_bytes,
                got_bytes,
            } => write!(
                f,
                "dimension mismatch: manifest implies {expected_bytes} bytes, file has {got_bytes}"
            ),
            LoadIssue::NonFinite => write!(f, "non-finite value"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration for `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("video `{id}` at byte offset {offset}: {issue}")]
    Load {
        id: String,
        offset: u64,
        issue: LoadIssue,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite score for candidate `{0}`")]
    NonFiniteScore(String),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::EmptySequence(_)
            | Error::DimensionMismatch { .. }
            | Error::DegenerateEmbedding(_)
            | Error::Load { .. }
            | Error::Io { .. }
            | Error::Data(_)
            | Error::Json(_) => "data",
            Error::NonFiniteScore(_) | Error::NonFiniteLoss(_) => "numeric",
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 1,
            "data" => 2,
            _ => 3,
        }
    }
}
