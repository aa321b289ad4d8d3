use thiserror::Error;

/// Errors produced anywhere in the tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid clip: {0}")]
    InvalidClip(String),

    #[error("simulation diverged at t = {time:.4} s: {detail}")]
    SimulationDiverged { time: f64, detail: String },

    #[error("optimization diverged at iteration {iteration}: {detail}")]
    OptimizationDiverged { iteration: usize, detail: String },

    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(what: impl Into<String>, detail: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
