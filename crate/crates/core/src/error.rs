use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid robot parameter `{name}`: {reason}")]
    InvalidParams { name: &'static str, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("finite-difference step {0:e} is not representable at the evaluation point")]
    StepTooSmall(f64),

    #[error("invalid LQR weights: {0}")]
    InvalidWeights(String),

    #[error("LQR synthesis failed: {0}")]
    Synthesis(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
