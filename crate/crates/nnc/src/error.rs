//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NncError {
    /// Bad configuration: dimension mismatches, invalid hyperparameters,
    /// topology violations caught at build time.
    #[error("configuration error: {0}")]
    Config(String),

    /// Misuse of an API contract (e.g. backward on a non-scalar, double backward).
    #[error("usage error: {0}")]
    Usage(String),

    /// File / format problems while reading external data.
    #[error("data error in {path} at byte {offset}: {message}")]
    Parse {
        path: String,
        offset: u64,
        message: String,
    },

    /// Numeric failure during training or evaluation (NaN/Inf).
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NncError>;

impl NncError {
    pub fn config(msg: impl Into<String>) -> Self {
        NncError::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        NncError::Usage(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        NncError::Numeric(msg.into())
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            NncError::Config(_) | NncError::Usage(_) => 1,
            NncError::Parse { .. } | NncError::Io(_) | NncError::Json(_) => 2,
            NncError::Numeric(_) => 3,
        }
    }
}
