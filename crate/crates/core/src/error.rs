use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quadrature with {nodes} nodes per axis cannot resolve degree {degree}")]
    QuadratureTooSmall { nodes: usize, degree: usize },

    #[error("pairing <{left}, {right}> is not supported")]
    UnsupportedPairing { left: &'static str, right: &'static str },

    #[error("pairing <{left}, {right}> diverges")]
    DivergentPairing { left: &'static str, right: &'static str },

    /// A runtime check of a theorem hypothesis failed (bounded fields, no explosion, q > d/4).
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
