use std::path::PathBuf;

/// Errors produced anywhere in the stance pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record in {file} at line {line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid label at line {line}")]
    InvalidLabel { line: usize },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("no users")]
    NoUsers,

    #[error("dangling tweet {0}")]
    DanglingTweet(String),

    #[error("dangling user {0}")]
    DanglingUser(String),

    #[error("duplicate tweet node for tweet {tweet_id} attached to user {user_id}")]
    DuplicateTweetNode { tweet_id: String, user_id: String },

    #[error("cannot stratify: class {label} has {count} members (need at least 3)")]
    Stratify { label: String, count: usize },

    #[error("invalid target name {0:?}")]
    InvalidTarget(String),

    #[error("invalid embedder spec: {0}")]
    EmbedderSpec(String),

    #[error("no embedding for node {0}")]
    MissingEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("unparseable response")]
    UnparseableResponse,

    #[error("llm request failed after {attempts} attempts (status {status:?}): {body}")]
    LlmExhausted {
        attempts: u32,
        status: Option<u16>,
        body: String,
    },

    #[error("missing api key: environment variable {0} is not set")]
    MissingApiKey(String),

    #[error("too few training users: {0} (need at least 2)")]
    TooFewTrainingUsers(usize),

    #[error("feature ratio r must lie in (0, 1), got {0}")]
    InvalidRatio(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("unknown user id {0}")]
    UnknownUser(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSynth(String),

    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
