use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A value that should be integral by total unimodularity was not.
    #[error("integrality violation at {tag} (variable {var}): value {value}")]
    Integrality { var: usize, tag: String, value: f64 },

    #[error("branch-and-bound node budget of {0} exceeded")]
    NodeBudget(usize),

    #[error("simplex iteration limit of {0} exceeded")]
    IterationLimit(usize),

    #[error("program is {0}")]
    NotOptimal(&'static str),

    #[error("instance too large for exact enumeration: {0}")]
    Scale(String),

    #[error("trace ingestion: {0}")]
    Ingestion(String),

    #[error("epoch {epoch} at t={clock_s}s: {message}")]
    Epoch {
        epoch: usize,
        clock_s: u64,
        message: String,
    },

    #[error("simulation invariant broken: {0}")]
    Invariant(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
