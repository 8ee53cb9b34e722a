//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("configuration value out of bounds at coordinate(s) {coords:?}: {details}")]
    OutOfBounds { coords: Vec<usize>, details: String },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("scenario parse error: {0}")]
    ScenarioParse(String),

    #[error("kernel matrix not positive definite (jitter escalated to {max_jitter:e})")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("numerical overflow: {0}")]
    NumericalOverflow(String),

    #[error("falsification budget {budget} smaller than initialization size {init}")]
    BudgetTooSmall { budget: usize, init: usize },

    #[error("refinement requires at least one counterexample")]
    EmptyCounterexampleSet,

    #[error("policy enumeration too large: {states} states would need {policies:e} candidates")]
    EnumerationTooLarge { states: usize, policies: f64 },

    #[error("diagnostic requires at least {required} iterations, run has {got}")]
    InsufficientIterations { required: usize, got: usize },

    #[error("improvement trace is degenerate: first delta is zero but tail is not")]
    DegenerateTrace,

    #[error("slip perturbation {epsilon} leaves probability range [0, 1]")]
    InvalidPerturbation { epsilon: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
