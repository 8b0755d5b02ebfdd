use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("propagation gap: dt = {dt} s (must be in (0, {max}])")]
    PropagationGap { dt: f64, max: f64 },

    #[error("point time {t:.9} outside pose history [{start:.9}, {end:.9}]")]
    UndistortionCoverage { t: f64, start: f64, end: f64 },

    #[error("imu coverage gap of {gap:.6} s before t = {t:.9}")]
    ImuCoverage { t: f64, gap: f64 },

    #[error("sensor not at rest: accel variance {variance:.6} exceeds {threshold:.6}")]
    NotAtRest { variance: f64, threshold: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("{path}: truncated payload ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: timestamps not monotone at line {line}")]
    NonMonotone { path: PathBuf, line: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("config: missing required key `{0}`")]
    MissingKey(String),

    #[error("config: unknown key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
