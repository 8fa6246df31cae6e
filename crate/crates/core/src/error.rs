use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate cycle: {0}")]
    DegenerateCycle(String),

    #[error("degenerate design matrix: {0}")]
    DegenerateDesign(String),

    #[error("volume out of envelope during PEEP step {step} (PEEP {peep_cmh2o} cmH2O): {detail}")]
    OutOfEnvelope {
        step: usize,
        peep_cmh2o: f64,
        detail: String,
    },

    #[error("simulation state error: {0}")]
    SimulationState(String),

    #[error("undefined NRMSE: measured volume is constant")]
    ConstantSignal,

    #[error("unphysiological fit: a1 = {0} must be positive")]
    Unphysiological(f64),

    #[error("no accepted cycles: {0}")]
    Empty(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
