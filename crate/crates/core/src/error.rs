use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// An intrinsic function broke its contract (e.g. emitted an action).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("backend error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend {
        message: String,
        status: Option<u16>,
        retryable: bool,
    },

    /// A scripted backend received a request its script did not expect.
    #[error("test fixture error: {0}")]
    Fixture(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("prompt too large: {tokens} tokens exceeds budget {budget}")]
    PromptTooLarge { tokens: usize, budget: usize },

    #[error("undefined loss: {0}")]
    UndefinedLoss(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("no plan: {0}")]
    NoPlan(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn backend(message: impl Into<String>, status: Option<u16>, retryable: bool) -> Self {
        Error::Backend {
            message: message.into(),
            status,
            retryable,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }
}
