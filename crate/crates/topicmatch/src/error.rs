//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix extents do not line up.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// Non-finite values, vanishing denominators, ill-conditioned systems.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A geometric solve has no usable solution (collinear points, rank loss).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// Too few correspondences or samples to proceed.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Malformed file contents (images, checkpoints, manifests).
    #[error("format error: {0}")]
    Format(String),

    /// Bad configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for data problems, 3 for numeric ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Degenerate(_) => 3,
            Error::Dim(_) | Error::Contract(_) => 3,
            Error::InsufficientData(_)
            | Error::Format(_)
            | Error::Config(_)
            | Error::Io(_) => 2,
        }
    }
}
