use thiserror::Error;

/// Crate-wide error type. Shape bookkeeping goes through these as well so a
/// dimension bug surfaces as an error instead of silently corrupt numbers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid decoder spec: {0}")]
    Spec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("projection diverged at inner iteration {iter}: loss {loss:.3e} exceeds {limit:.3e}")]
    Diverged { iter: usize, loss: f64, limit: f64 },
    #[error("image decode failed: {0}")]
    ImageFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;
