use thiserror::Error;

/// Errors surfaced by the simulation, learning and control pipeline.
#[derive(Error, Debug)]
pub enum CoreError {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("simulation diverged: {0}")]
    Divergence(String),

    #[error("dataset error at line {line}: {msg}")]
    DatasetFormat { line: usize, msg: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("QP solve failed: {0}")]
    QpFailure(String),

    #[error("controller fault: {0}")]
    ControllerFault(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
