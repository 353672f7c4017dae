use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize },

    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("substep budget of {max_substeps} exhausted at t = {t}")]
    SubstepBudget { t: f64, max_substeps: u64 },

    #[error("sparse regression pruned every term for output dimension {dim}")]
    EmptySupport { dim: usize },

    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }
}
