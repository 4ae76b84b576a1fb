use thiserror::Error;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum SimError {
    /// A model or run configuration violates its contract.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Field/matrix shapes do not match the spectral space.
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    /// Requested noise window lies outside the path horizon.
    #[error("noise window out of range: step {start} x {len} exceeds {max} base steps")]
    WindowOutOfRange { start: usize, len: usize, max: usize },

    /// A trajectory left the representable range.
    #[error("blow-up detected at step {step} (t = {time:.6e}): {what}")]
    BlowUp { step: usize, time: f64, what: String },

    /// Dense linear algebra failed (factorization, eigen solve, ...).
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
