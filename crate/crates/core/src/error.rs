use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("target ({x:.4}, {y:.4}) lies inside the release circle of radius {radius} m")]
    InsideReleaseCircle { x: f64, y: f64, radius: f64 },

    #[error("target unreachable with a 45 degree release: {0}")]
    Unreachable(String),

    #[error("bin too small: placed {placed} of {requested} objects before giving up")]
    BinTooSmall { placed: usize, requested: usize },

    #[error("flight did not reach the landing plane within {0} s")]
    FlightTimeout(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing label: {0}")]
    MissingLabel(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
