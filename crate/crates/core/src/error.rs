use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape mismatch, wrong policy family, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    /// Data that parsed but breaks a dataset invariant.
    #[error("validation error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<u64>, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation {
            line: None,
            msg: msg.into(),
        }
    }

    /// True for errors that the CLI reports with the config-error exit code.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Json(_) | Error::Contract(_) | Error::Validation { .. } | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
