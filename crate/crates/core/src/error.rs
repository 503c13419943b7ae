use thiserror::Error;

/// Errors shared across the solver modules.
#[derive(Error, Debug)]
pub enum Error {
    /// A problem definition violates a structural requirement (non-positive
    /// weight, bad exponent range, inconsistent dimensions, ...).
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    /// A kernel sample came out negative or non-finite.
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    /// Grid construction rejected its parameters.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two fields (or a field and an operator) live on different grids.
    #[error("grid mismatch: expected {expected} nodes, got {got}")]
    GridMismatch { expected: usize, got: usize },

    /// A linear system could not be factorized.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// An iterative solver ran out of iterations.
    #[error("iteration limit after {iterations} iterations (last residual {residual:.3e})")]
    IterationLimit { iterations: usize, residual: f64 },

    /// Continuation could not leave the trivial branch.
    #[error("seed failure: could not leave the trivial branch (residual history {history:?})")]
    SeedFailure { history: Vec<f64> },

    /// The verification suite was started without a required fixture.
    #[error("missing fixture: {0}")]
    MissingFixture(String),

    /// Malformed configuration input.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
