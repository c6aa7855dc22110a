use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("duplicate mode {0}")]
    DuplicateMode(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("invalid permutation move: {0}")]
    InvalidMove(String),
    #[error("missing rank for node {0}")]
    MissingRank(usize),
    #[error("inadmissible ranks: {0}")]
    Inadmissible(String),
    #[error("size guard exceeded: {entries} entries > cap {cap}")]
    SizeGuard { entries: usize, cap: usize },
    #[error("point outside the domain: {0}")]
    OutOfDomain(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no eligible permutation move after {0} attempts")]
    NoEligibleMove(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
