use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Raw input cannot be turned into a probability distribution.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// p has mass where q has none, so KL(p || q) is undefined.
    #[error("support mismatch: p has mass {p_mass} at outcome {outcome} where q has zero mass")]
    SupportMismatch { outcome: usize, p_mass: f64 },

    /// Two distributions do not share the same index structure.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// A loss or gradient became non-finite during training.
    #[error("numerical abort at step {step}: {detail}")]
    NumericalAbort { step: u64, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
