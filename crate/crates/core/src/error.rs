//! Error types shared across the crate.

use thiserror::Error;

/// Invalid construction parameters (dimensions, pairings, ranges).
#[derive(Debug, Clone, Error, PartialEq)]
#[error("configuration error: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

/// A vector had the wrong length for the requested operation.
#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("dimension error: expected vector of length {expected}, got {got}")]
pub struct DimensionError {
    pub expected: usize,
    pub got: usize,
}

/// Failures in spectral estimation and scaled-moment arithmetic.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpectralError {
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),
    /// The caller's coefficient did not decay fast enough for the scaled
    /// moment product to stay within double range.
    #[error("overflow contract violation: exponent {exponent:.3e} exceeds 700")]
    ExponentOverflow { exponent: f64 },
    #[error("moment index {k} outside table horizon {horizon}")]
    HorizonExceeded { k: usize, horizon: usize },
    /// A naive-arithmetic moment was non-finite when the algorithm touched it.
    #[error("moment overflow at k={k}")]
    MomentOverflow { k: usize },
    #[error("invalid spectral input: {0}")]
    InvalidInput(String),
}

/// Denoiser input validation failures.
#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum DenoiseError {
    #[error("noise variance must be positive, got {0}")]
    NonPositiveVariance(f64),
}
