use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid schedule config: {0}")]
    InvalidScheduleConfig(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("condition label {0} matches no mixture component")]
    UnknownLabel(u32),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid guidance spec: {0}")]
    InvalidGuidance(String),

    #[error("invalid cost model: {0}")]
    InvalidCost(String),

    #[error("step index {t} outside 1..={num_steps}")]
    StepOutOfRange { t: usize, num_steps: usize },

    #[error("seed sets differ between baseline and variant")]
    SeedMismatch,

    #[error("point set is empty")]
    EmptySet,

    #[error("degenerate fit: no row with f > 0")]
    DegenerateFit,

    #[error("invalid sweep: {0}")]
    InvalidSweep(String),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
