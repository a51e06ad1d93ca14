use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter vector violates the model's constraints.
    #[error("parameter `{name}` = {value} is outside its domain ({reason})")]
    ParameterDomain {
        name: String,
        value: f64,
        reason: String,
    },

    /// Every importance weight underflowed to zero at `step`.
    #[error("all particle weights are zero at step {step}; the observation is incompatible with the particle cloud")]
    DegenerateWeights { step: usize },

    /// The backward-kernel normaliser for `particle` underflowed at `step`.
    #[error("backward kernel normaliser underflows for particle {particle} at step {step} (max log term {max_log_term:.1})")]
    DegenerateBackwardKernel {
        step: usize,
        particle: usize,
        max_log_term: f64,
    },

    #[error("problem size {requested} exceeds the capacity limit {limit}: {what}")]
    Capacity {
        what: &'static str,
        requested: f64,
        limit: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The M-step map was evaluated outside its admissible domain.
    #[error("maximisation map rejected the summary statistics: {0}")]
    LambdaDomain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(name: &str, value: f64, reason: impl Into<String>) -> Self {
        Error::ParameterDomain {
            name: name.to_string(),
            value,
            reason: reason.into(),
        }
    }
}
