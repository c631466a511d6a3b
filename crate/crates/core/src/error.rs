use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed triplet line {0}: expected 3 tab-separated fields")]
    MalformedLine(usize),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("no precomputed embedding for text `{0}`")]
    MissingEmbedding(String),

    #[error("provider mismatch: dense index was built with `{index}`, query provider is `{provider}`")]
    ProviderMismatch { index: String, provider: String },

    #[error("rerank scorer unavailable: {0}")]
    ScorerUnavailable(String),

    #[error("reranker score {score} for passage {passage_id} is outside [0, 1]")]
    ScoreOutOfRange { passage_id: usize, score: f64 },

    #[error("cannot fuse an empty retriever list")]
    EmptyList,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("example `{0}` has no gold answer")]
    MissingGold(String),

    #[error("invalid example `{id}`: {reason}")]
    InvalidExample { id: String, reason: String },

    #[error("invalid query: {0}")]
    InvalidQuery(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("corpus digest mismatch: {what} was built for {expected}, corpus is {actual}")]
    DigestMismatch {
        what: &'static str,
        expected: String,
        actual: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}
