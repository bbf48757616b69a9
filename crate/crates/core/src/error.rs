use thiserror::Error;

use crate::ir::ParseError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown target id `{0}`")]
    UnknownTarget(String),
    #[error("no target ids given")]
    EmptyTargets,
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("cannot classify marker in block {block}: {reason}")]
    MisplacedMarker { block: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
