use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("node {node} out of range (graph has {num_nodes} nodes)")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("conflicting edit: {0}")]
    ConflictingEdit(String),

    #[error("non-finite training loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("non-finite gradient for node {0}")]
    NonFiniteGradient(usize),

    #[error("invalid posterior row for node {0}")]
    MalformedPosterior(usize),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("requested {requested} items from a pool of {available}")]
    PoolTooSmall { requested: usize, available: usize },

    #[error("invalid bypass arguments: need m_A ({m_a}) <= N ({n}) and m_V ({m_v}) <= N")]
    BypassArguments { n: usize, m_a: usize, m_v: usize },

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("experiment stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
