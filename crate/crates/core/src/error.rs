use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid source model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "state space for b={buffer}, delta_max={delta_max} exceeds the budget of {budget} states"
    )]
    Capacity {
        buffer: usize,
        delta_max: u32,
        budget: usize,
    },

    #[error("error evaluation failed at state {state}: {source}")]
    AtState {
        state: String,
        #[source]
        source: Box<Error>,
    },

    #[error("value iteration hit the cap of {0} sweeps")]
    IterationCap(usize),

    #[error("dual ascent aborted at iteration {iteration}: {reason}; trace: {trace}")]
    DualAborted {
        iteration: usize,
        reason: String,
        trace: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (configuration, arguments,
    /// malformed files) as opposed to failures while computing.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::InvalidModel(_) | Error::InvalidArgument(_) | Error::Config(_) => true,
            Error::Json(e) => !e.is_io(),
            _ => false,
        }
    }
}
