use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("point behind camera (z = {0})")]
    BehindCamera(f64),
    #[error("invalid depth: {0}")]
    InvalidDepth(String),
    #[error("empty support: {0}")]
    EmptySupport(String),
    #[error("invalid depth bounds: d_min = {d_min}, d_max = {d_max}")]
    InvalidBounds { d_min: f64, d_max: f64 },
    #[error("rejected step: {0}")]
    RejectedStep(String),
    #[error("no ground plane: {0}")]
    NoGroundPlane(String),
    #[error("degenerate scale: {0}")]
    DegenerateScale(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
