use thiserror::Error;

#[derive(Debug, Error)]
pub enum H2Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("structural invariant violated: {0}")]
    Structure(String),
    #[error("matrix of dimension {n} exceeds the dense limit {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("error estimate undefined: product norm is zero but residual is {0}")]
    ZeroReference(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, H2Error>;
