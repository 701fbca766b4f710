//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor has the wrong shape for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("argument error: {0}")]
    Argument(String),

    /// A value became non-finite or a numeric procedure cannot produce a result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A quantized latent was used in the wrong mode (e.g. noisy latent handed
    /// to the entropy coder).
    #[error("mode error: {0}")]
    Mode(String),

    /// A serialized container (bitstream, checkpoint, results file) is malformed.
    #[error("format error: {0}")]
    Format(String),

    /// An entropy-coded payload cannot be decoded.
    #[error("decode error: {0}")]
    Decode(String),

    /// A loss or run configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
