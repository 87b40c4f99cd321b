use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid config keys: {}", .0.join(", "))]
    Validation(Vec<String>),
    #[error("routing error: {0}")]
    Routing(String),
    #[error("signal controller error: {0}")]
    Controller(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("wiring error: {0}")]
    Wiring(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
