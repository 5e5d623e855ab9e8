use std::path::PathBuf;

use thiserror::Error;

use crate::clustering::TopicId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate post id `{0}`")]
    DuplicatePostId(String),

    #[error("duplicate user id `{0}`")]
    DuplicateUserId(String),

    #[error("post `{post_id}` references unknown user `{user_id}`")]
    UnknownUser { post_id: String, user_id: String },

    #[error("{field} = {value} is out of range {range}")]
    OutOfRange {
        field: &'static str,
        value: String,
        range: &'static str,
    },

    #[error("{count} expected key(s) missing from embeddings, e.g. {}", .shown.join(", "))]
    MissingKeys { count: usize, shown: Vec<String> },

    #[error("dimension mismatch for `{key}`: expected {expected}, found {found}")]
    DimensionMismatch {
        key: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite component in vector `{0}`")]
    NonFinite(String),

    #[error("zero vector for `{0}`")]
    ZeroVector(String),

    #[error("duplicate key `{0}`")]
    DuplicateKey(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("need at least {needed} points, found {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("design matrix is rank deficient at predictor column {column}")]
    RankDeficient { column: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("misaligned inputs: {0}")]
    Misaligned(String),

    #[error("unknown topic {0}")]
    UnknownTopic(TopicId),

    #[error("topic {0} has no posts")]
    EmptyTopic(TopicId),

    #[error("post `{0}` has no embedded sentences")]
    NoSentences(String),

    #[error("accepted post `{0}` is not in any candidate pool")]
    NotInPools(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing prerequisite for `{stage}`: run `{prerequisite}` first")]
    MissingPrerequisite {
        stage: &'static str,
        prerequisite: &'static str,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
