use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("non-monotonic time at row {row}")]
    NonMonotonicTime { row: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("recording of {duration_s:.3} s is shorter than one {window_s} s window")]
    TooShort { duration_s: f64, window_s: f64 },
    #[error("cutoff ≥ Nyquist ({cutoff_hz} Hz at fs {fs} Hz)")]
    CutoffAboveNyquist { cutoff_hz: f64, fs: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("too few beats: found {found}, need at least {needed}")]
    TooFewBeats { found: usize, needed: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix not positive definite after jitter escalation (max jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },
    #[error("{0} did not converge")]
    NonConvergence(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("stage `{stage}` failed on {id}: {source}")]
    Stage {
        stage: &'static str,
        id: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: &'static str, id: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            id: id.into(),
            source: Box::new(self),
        }
    }
}
