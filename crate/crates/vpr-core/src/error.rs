//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset loading, encoding, model evaluation and training.
#[derive(Debug, Error)]
pub enum Error {
    /// Manifest or config file violates its schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A configuration is internally inconsistent or missing required fields.
    #[error("configuration error: {0}")]
    Config(String),

    /// Label-map encoding or decoding failed.
    #[error("encode error: {0}")]
    Encode(String),

    /// Tensor shape or dimension mismatch in the model.
    #[error("model error: {0}")]
    Model(String),

    /// Loss inputs are incompatible.
    #[error("loss error: {0}")]
    Loss(String),

    /// Dataset contents are inconsistent with what an operation requires.
    #[error("data error: {0}")]
    Data(String),

    /// Training could not proceed (missing weights, empty splits).
    #[error("training error: {0}")]
    Training(String),

    /// A stored artifact does not match the expected provenance digest.
    #[error("provenance error: {0}")]
    Provenance(String),

    /// A binary container is corrupt or has an unsupported version.
    #[error("format error: {0}")]
    Format(String),

    /// Query input incompatible with the retrieval index.
    #[error("query error: {0}")]
    Query(String),

    /// Evaluation preconditions violated (e.g. missing segmentation input).
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
