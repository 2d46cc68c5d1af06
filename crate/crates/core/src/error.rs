use thiserror::Error;

/// Errors surfaced by the numerical operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time ordering violated: expected {expected}, got s={s}, t={t}")]
    TimeOrdering { expected: &'static str, s: f64, t: f64 },

    #[error("non-finite value encountered in {context} at t={t}, point={point:?}")]
    NonFinite { context: &'static str, t: f64, point: Vec<f64> },

    #[error("degenerate sample set: {0}")]
    DegenerateSample(String),

    #[error("cutoff ladder exhausted after radius {max_radius}: {hint}")]
    LadderExhausted { max_radius: f64, hint: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
