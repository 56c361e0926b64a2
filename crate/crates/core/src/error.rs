use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    Shape(String),
    #[error("rejected input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("mode violation: {0}")]
    ModeViolation(String),
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Wraps the message with extra context (probe index, iteration, ...).
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
            Error::DegenerateEmbedding(m) => Error::DegenerateEmbedding(format!("{ctx}: {m}")),
            Error::Input(m) => Error::Input(format!("{ctx}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{ctx}: {m}")),
            other => other,
        }
    }
}
