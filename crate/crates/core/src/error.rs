use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },
    #[error("band centered at {center} Hz lies above the Nyquist frequency {nyquist} Hz")]
    BandAboveNyquist { center: f64, nyquist: f64 },
    #[error("degenerate slope fit: {0}")]
    DegenerateFit(String),
    #[error("no band produced a reliable decay fit")]
    NoReliableBand,
    #[error("cannot measure: {0}")]
    Unmeasurable(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
