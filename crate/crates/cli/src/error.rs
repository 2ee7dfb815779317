use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] agent_core::Error),

    #[error("config error in {path}: {message}")]
    Config { path: String, message: String },

    /// Rejection sampling or filtering left nothing to write.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 2 for configuration and input problems, 3 for backend failures, 4
    /// for an empty dataset, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use agent_core::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::EmptyDataset(_) => 4,
            CliError::Core(E::Config { .. } | E::InvalidInput(_) | E::NotFound(_)) => 2,
            CliError::Core(E::Backend { .. }) => 3,
            _ => 1,
        }
    }
}
