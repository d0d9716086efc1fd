use thiserror::Error;

/// Error taxonomy shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Non-finite values or other numeric contract breaks.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller violated an API contract (e.g. non-scalar loss).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed user input (images, token ids, sample files).
    #[error("invalid input: {0}")]
    Input(String),

    /// Inconsistent model or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
