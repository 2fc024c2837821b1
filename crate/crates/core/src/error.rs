use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient flock: need at least 2 robots, got {0}")]
    InsufficientFlock(usize),

    #[error("invalid arena: {0}")]
    InvalidArena(String),

    #[error("invalid endpoint: {0}")]
    InvalidEndpoint(String),

    #[error("unreachable: no path from start to goal")]
    Unreachable,

    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
