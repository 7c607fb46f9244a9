use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("malformed clip file header: {0}")]
    MalformedHeader(String),

    #[error("truncated clip payload: {0}")]
    TruncatedPayload(String),

    #[error("unsupported clip file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("requested {requested} items but only {available} are available")]
    Insufficient { requested: usize, available: usize },

    #[error("episodic memory is empty")]
    EmptyMemory,

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
