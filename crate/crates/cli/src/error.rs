use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("server returned {status} {code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("could not reach {url}: {source}")]
    Transport { url: String, source: reqwest::Error },
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 2 for usage errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn code(&self) -> &str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Api { code, .. } => code,
            CliError::Transport { .. } => "Transport",
            CliError::Protocol(_) => "Protocol",
            CliError::NotFound(_) => "NotFound",
            CliError::Io { .. } => "Io",
            CliError::Other(_) => "Error",
        }
    }
}
