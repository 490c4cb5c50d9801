use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The document did not parse against the domain / artifact schema.
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema {
        line: usize,
        column: usize,
        message: String,
    },

    /// The document parsed but violates a model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("policy iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("linear Q weights diverged at episode {episode}, step {step}")]
    Diverged { episode: usize, step: usize },

    #[error("DQN loss became NaN at iteration {iteration}")]
    NanLoss { iteration: usize },

    #[error("states {first} and {second} share a feature vector but have different actions; leaf cannot be split")]
    UnsplittableLeaf { first: usize, second: usize },

    #[error("empty interval for feature {feature}: [{lo}, {hi})")]
    EmptyInterval { feature: usize, lo: f64, hi: f64 },

    #[error("no explanation available for state {state}: the surrogate tree predicts {predicted} but the policy takes {optimal}")]
    ExplanationUnavailable {
        state: usize,
        predicted: usize,
        optimal: usize,
    },

    #[error("invalid foil: action {action} is already the optimal action in state {state}")]
    InvalidFoil { state: usize, action: usize },

    #[error("no state has action {action} as its optimal action")]
    NoFoilState { action: usize },

    #[error("artifact checksum mismatch for {0}")]
    Checksum(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn schema(err: serde_json::Error) -> Self {
        Error::Schema {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
