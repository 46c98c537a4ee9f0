use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("zero forcing needs at least as many APs as users (M = {aps}, K = {users})")]
    TooFewAps { aps: usize, users: usize },

    #[error("requested {requested} codepoints but the training set has only {available} distinct points")]
    TooFewDistinctPoints { requested: usize, available: usize },

    #[error("channel Gram matrix is numerically singular")]
    SingularGram,

    #[error("channel draw stayed degenerate after {0} redraws")]
    DegenerateChannel(usize),

    #[error("improvement ratio needs a positive baseline, got {0}")]
    NonPositiveBaseline(f64),

    #[error("no integer level plan fits within {0} APs")]
    NoFeasiblePlan(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
