use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rendered length {len} exceeds context length {context}")]
    TooLong { len: usize, context: usize },

    #[error("triple ({subject}, {relation}, {object}) is inconsistent with the knowledge table")]
    InconsistentTriple {
        subject: usize,
        relation: usize,
        object: usize,
    },

    #[error("requested {requested} distinct triples but only {available} are available")]
    NotEnoughTriples { requested: usize, available: usize },

    #[error("example has no target positions")]
    EmptyMask,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("token id {id} out of range for vocabulary of {size}")]
    TokenOutOfRange { id: usize, size: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("malformed parameter file: {0}")]
    ParamFormat(String),

    #[error("insufficient self data: need {need}, have {have}")]
    InsufficientSelf { need: usize, have: usize },

    #[error("vocabulary mismatch between datasets")]
    VocabMismatch,

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
