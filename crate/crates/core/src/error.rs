use thiserror::Error;

/// Errors raised by GP inference and the code built on top of it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("cholesky factorization of a {size}x{size} matrix failed after jitter escalation")]
    Factorization { size: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("empty data: {0}")]
    Empty(&'static str),
}
