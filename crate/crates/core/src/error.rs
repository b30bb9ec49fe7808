use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum TtcError {
    /// An argument lies outside the domain of the operation.
    #[error("input domain: {0}")]
    Domain(String),

    /// A result cannot be represented (e.g. a non-positive converted ratio).
    #[error("out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// RANSAC or least-squares fitting could not produce a model.
    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("model not initialized: {0}")]
    Uninitialized(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, TtcError>;

pub(crate) fn io_err(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> TtcError {
    let path = path.as_ref().display().to_string();
    move |source| TtcError::Io { path, source }
}
