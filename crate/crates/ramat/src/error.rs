use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// config/shape/contract problems exit 2, data problems exit 3, numeric
/// failures exit 4.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape mismatch between operands.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid configuration or incompatible checkpoint/config combination.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract (non-scalar loss,
    /// backward on a spent tape, missing gradient for a trainable name, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Malformed, insufficient, or schema-violating input data.
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure: NaN/Inf detected, non-convergence, etc.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Exit code contract: 0 success, 2 config error, 3 data error,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Contract(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
