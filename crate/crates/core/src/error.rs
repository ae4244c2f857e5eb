use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("illegal action {action} in state {state}")]
    IllegalAction { action: String, state: String },

    #[error("environment too large to enumerate: {size} terminal pairs exceeds cap {cap}")]
    TooLarge { size: u128, cap: u128 },

    #[error("point outside the oracle domain: {0}")]
    Domain(String),

    #[error("invalid token {token} at position {position}")]
    InvalidToken { token: u16, position: usize },

    #[error("query {index} failed: {source}")]
    Query {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("reward must be strictly positive, got {0}")]
    NonPositiveReward(f64),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("empty set")]
    EmptySet,

    #[error("need at least {need} objects, got {got}")]
    TooFew { need: usize, got: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures originating in the linear algebra or training numerics.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical(_) | Error::Divergence { .. } => true,
            Error::Round { source, .. } | Error::Query { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config { .. } => true,
            Error::Round { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
