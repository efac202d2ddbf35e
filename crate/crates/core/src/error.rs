use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent layer hyperparameters, tensor shapes, or run settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A backward pass was requested before the matching forward pass.
    #[error("state error: {0}")]
    State(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training aborted at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },

    #[error("input error: {0}")]
    Input(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checksum mismatch for tensor `{name}`")]
    Checksum { name: String },

    #[error("weights error: {0}")]
    Weights(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
