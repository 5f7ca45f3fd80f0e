use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("dimension {requested} exceeds the precomputed spectrum length {available}")]
    SpectrumTooShort { requested: usize, available: usize },

    #[error("non-finite coefficient at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exact stationary sampling is unsupported for the {0} target; use burn-in")]
    UnsupportedTarget(&'static str),

    #[error("the Q decomposition is only defined at the critical exponent 1/3 (got {0})")]
    DecompositionUndefined(String),

    #[error("recording policy does not retain what is needed: {0}")]
    Recording(String),

    #[error("{0} outside the domain {1}")]
    Domain(String, String),

    #[error("autocorrelation fit failed: {0}")]
    FitFailure(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
