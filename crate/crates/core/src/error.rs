use thiserror::Error;

/// Errors produced by the origin-audit library.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or experiment configuration is invalid or inconsistent with its data.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// A layer index outside the model was requested.
    #[error("layer access error: index {index} out of range 0..={max}")]
    Access { index: usize, max: usize },

    /// A checkpoint or report could not be decoded.
    #[error("deserialization error: {0}")]
    Deserialize(String),

    /// Invalid input to a data operation.
    #[error("input error: {0}")]
    Input(String),

    /// A delimited file could not be ingested.
    #[error("ingestion error at row {row}, column '{column}': {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },

    /// A statistic is undefined for the given data (constant series, rank-deficient design).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
