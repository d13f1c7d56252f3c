use thiserror::Error;

/// Errors produced by tree construction, compression and I/O.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point set contains non-finite coordinates")]
    NonFiniteCoordinates,

    #[error("index {index} out of range for dimension {n} in request {request}")]
    IndexOutOfRange {
        index: usize,
        n: usize,
        request: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("adaptive sampling exceeded {max_samples} samples at level {level}")]
    MaxSamplesExceeded { level: usize, max_samples: usize },

    #[error("sampler returned non-finite values")]
    NonFiniteSamples,

    #[error("problem size {n} exceeds dense guard {guard}")]
    DenseGuardExceeded { n: usize, guard: usize },

    #[error("grid point count {n} is not a perfect power for dimension {dim}")]
    NotAGrid { n: usize, dim: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
