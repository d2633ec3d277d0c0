use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("simulator returned a non-finite output {value} at {theta:?}")]
    Evaluation { theta: Vec<f64>, value: f64 },

    #[error("simulator failed: {0}")]
    SimulatorFailure(String),

    #[error("kernel matrix is not positive definite after nugget inflation")]
    SingularKernel,

    #[error("unknown test problem `{0}`")]
    UnknownProblem(String),

    #[error("progress curve never reaches error level {alpha} within {budget} evaluations")]
    InfeasibleTarget { alpha: f64, budget: usize },

    #[error("no baseline makespan for batch size {0}")]
    MissingBaseline(usize),

    #[error("incompatible trace schema in {path}: {reason}")]
    Schema { path: String, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
