use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Returned by [`crate::audio::snr_db`] when the perturbation has zero energy.
    /// Callers treat this as an infinite SNR.
    #[error("no perturbation")]
    NoPerturbation,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("target of {labels} labels ({repeats} adjacent repeats) does not fit in {frames} frames")]
    Infeasible {
        frames: usize,
        labels: usize,
        repeats: usize,
    },

    #[error("non-finite value at iteration {iteration}: {what}")]
    Numeric { iteration: usize, what: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("instance too large for enumeration: {0}")]
    Guard(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: missing columns {0:?}")]
    Schema(Vec<String>),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
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
