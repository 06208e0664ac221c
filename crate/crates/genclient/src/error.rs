use crate::dedupe::Pair;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("environment variable {0} holding the auth token is not set")]
    MissingToken(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("generated {got} of {want} pairs before the budget ran out")]
    Shortfall {
        got: usize,
        want: usize,
        partial: Box<Vec<Pair>>,
    },
    #[error("http client: {0}")]
    Http(#[from] reqwest::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
