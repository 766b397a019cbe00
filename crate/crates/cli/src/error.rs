use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or configuration.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or unwritable files.
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: anyhow::Error,
    },
    /// A check that ran but did not pass.
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: impl Into<anyhow::Error>) -> Self {
        CliError::Io {
            context: context.into(),
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}
