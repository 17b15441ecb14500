use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Noll index {0}: must be >= 1")]
    InvalidIndex(i64),

    #[error("radius {0} lies outside the unit aperture")]
    OutOfAperture(f64),

    #[error("piston (n = 0) carries no turbulence statistics")]
    PistonExcluded,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("far-field resolution too coarse: angular pitch {pitch:.3e} rad exceeds {limit:.3e} rad")]
    Resolution { pitch: f64, limit: f64 },

    #[error("centroid undefined for an image with zero power")]
    ZeroPower,

    #[error("ensemble selection failed: {0}")]
    Selection(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },

    #[error("no attack angles available")]
    NoAttackAngles,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
