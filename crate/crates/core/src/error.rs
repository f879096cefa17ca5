use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("endpoint error: {0}")]
    Endpoint(#[from] crate::chunker::endpoint::EndpointError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    /// True when the failure was caused by the caller's input or environment
    /// rather than a defect in this crate.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Shape(_) | Error::Contract(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
