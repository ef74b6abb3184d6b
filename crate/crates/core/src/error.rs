use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the routing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("unknown tag: {0}")]
    UnknownTag(String),

    #[error("unknown node: {0}")]
    UnknownNode(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("empty tag set")]
    EmptyTagSet,

    #[error("empty candidate set")]
    EmptyCandidateSet,

    #[error("true best answerer is not among the candidates")]
    TruthNotInCandidates,

    #[error("candidate set of size {0} is too small to rank")]
    DegenerateCandidateSet(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for errors caused by non-finite numerics during training.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}
