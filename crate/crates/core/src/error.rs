use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate coordinate {0}: weighted variance is not positive")]
    DegenerateCoordinate(usize),

    #[error("weights must be nonnegative, finite and not all zero")]
    ZeroWeights,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all {0} rows are invalid")]
    AllInvalid(usize),

    #[error("simulation retry cap exceeded: {invalid} of {attempts} draws were invalid")]
    RetryExhausted { invalid: usize, attempts: usize },

    #[error("simulation budget exceeded: {needed} simulations needed, budget is {budget}")]
    Budget { needed: usize, budget: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("log target is not finite at the initial point")]
    NonFiniteInit,

    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
