use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] sasft_core::Error),

    #[error(transparent)]
    Gen(#[from] sasft_genclient::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Structured failure written to stderr as one JSON object.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
    pub exit_code: i32,
}

impl CliError {
    pub fn invalid<I: IntoIterator<Item = String>>(v: I) -> Self {
        CliError::Invalid(v.into_iter().collect())
    }

    pub fn violations(&self) -> Vec<String> {
        match self {
            CliError::Invalid(v) => v.clone(),
            _ => Vec::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        use sasft_core::Error as C;
        match self {
            CliError::Invalid(_) => "invalid_config",
            CliError::Io { .. } => "io",
            CliError::Core(C::Config(_)) => "invalid_config",
            CliError::Core(C::Diverged { .. }) => "diverged",
            CliError::Core(C::InsufficientSelf { .. }) => "insufficient_self",
            CliError::Core(_) => "core",
            CliError::Gen(sasft_genclient::Error::Shortfall { .. }) => "shortfall",
            CliError::Gen(sasft_genclient::Error::MissingToken(_)) => "missing_token",
            CliError::Gen(_) => "genclient",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "invalid_config" => 2,
            _ => 1,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            violations: self.violations(),
            exit_code: self.exit_code(),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}
