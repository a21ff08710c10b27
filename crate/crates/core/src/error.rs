use thiserror::Error;

/// Broad classes used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("dimension mismatch: expected {expected} cells, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("binning mismatch: {0}")]
    Binning(String),

    #[error("ill-posed deconvolution: |DFT| = {modulus:e} at frequency index {frequency}")]
    IllPosed { frequency: usize, modulus: f64 },

    #[error("spread condition violated at x = {violations:?}")]
    SpreadViolated { violations: Vec<i64> },

    #[error("negative kernel entry {value:e} at j = {j}")]
    NegativeKernel { j: i64, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Domain(_)
            | Error::Data(_)
            | Error::DimensionMismatch { .. }
            | Error::Binning(_)
            | Error::SpreadViolated { .. } => ErrorKind::Data,
            Error::IllPosed { .. } | Error::NegativeKernel { .. } => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            Error::Json(_) => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
