//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by space construction, sampling, training, search and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An architecture references options outside its search space.
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// A one-hot group vector is structurally broken (wrong arity, not
    /// exactly one hot entry, or a hot entry on an inactive option).
    #[error("malformed one-hot encoding: {0}")]
    MalformedOneHot(String),

    /// Enumeration or exact expectation was requested on a space larger
    /// than the stated limit.
    #[error("search space too large: cardinality {cardinality} exceeds limit {limit}")]
    SpaceTooLarge { cardinality: u128, limit: u128 },

    /// Option lists violate a search-space invariant.
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    /// A scalar argument is out of its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An architecture was assigned probability zero in strict mode.
    #[error("zero-probability option selected for variable {var}")]
    ZeroProbability { var: usize },

    /// Configuration file rejected; `line` is 1-based.
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    /// Training produced a NaN or infinite loss; carries a diagnostic record.
    #[error("non-finite loss {value} at epoch {epoch} step {step} on architecture {arch}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        arch: String,
        value: f64,
    },

    /// The constraint is below the cost of the cheapest architecture.
    #[error("infeasible constraint: budget {omega} is below the minimal architecture cost {min_cost}")]
    InfeasibleConstraint { omega: u64, min_cost: u64 },

    /// A checkpoint file failed structural validation.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Another process holds the output directory.
    #[error("output directory is locked: {0}")]
    OutputLocked(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 infeasible, 4 corrupt
    /// checkpoint, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::InfeasibleConstraint { .. } => 3,
            Error::CorruptCheckpoint(_) => 4,
            _ => 1,
        }
    }
}
