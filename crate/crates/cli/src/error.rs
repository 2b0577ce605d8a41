use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("config line {line}: {message}")]
    Syntax { line: u64, message: String },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] rcgrf::Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::UnknownKey(_) => "unknown_key",
            CliError::Config { .. } => "config",
            CliError::Syntax { .. } => "config_syntax",
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.code(),
        }
    }

    /// `error[code]: message` on one line.
    pub fn render(&self) -> String {
        let text = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.code(), text)
    }
}
