use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CalibError>;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("edge ({0}, {1}) has an endpoint outside 0..{2}")]
    InvalidEdge(usize, usize, usize),
    #[error("BFS source set is empty")]
    EmptySourceSet,
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("row {row} is not a probability vector (sum {sum})")]
    NotAProbability { row: usize, sum: f64 },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("parameter {0} is not finite")]
    NonFiniteParameter(String),
    #[error("calibration (validation) set is empty")]
    EmptyCalibrationSet,
    #[error("fit diverged at epoch {epoch}: loss {loss}")]
    FitDiverged { epoch: usize, loss: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every grid cell failed to fit")]
    GridExhausted,
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl CalibError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CalibError::Io { path: path.into(), source }
    }
}

impl CalibError {
    /// Process exit code: 3 when fitting diverged, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CalibError::FitDiverged { .. } | CalibError::GridExhausted => 3,
            _ => 2,
        }
    }
}
