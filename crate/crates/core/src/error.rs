use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("car-following gap must be positive, got {gap}")]
    NonPositiveGap { gap: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("trial {trial_id}: {msg}")]
    InvalidTrial { trial_id: String, msg: String },

    #[error("no start converged for trial {trial_id} (best cost {best_cost})")]
    FitDidNotConverge {
        trial_id: String,
        best_cost: f64,
        best: Box<crate::calibration::FitResult>,
    },

    #[error("classifier training: {0}")]
    Training(String),

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
