use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    DegenerateVector { norm: f64 },

    #[error("expected a unit vector, got norm {norm}")]
    NotUnitNorm { norm: f64 },

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("budget {budget} exceeds the {available} unlabeled points")]
    BudgetExceeded { budget: usize, available: usize },

    #[error("k-center selection needs a non-empty labeled seed set")]
    EmptySeedSet,

    #[error("step {step} outside schedule [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl ToString, actual: impl ToString) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
