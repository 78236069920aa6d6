use thiserror::Error;

/// Errors surfaced by the simulation and training stack.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("topology parse error in field `{field}`: {message}")]
    TopologyParse { field: String, message: String },

    #[error("graph not connected")]
    NotConnected,

    #[error("traffic error: {0}")]
    Traffic(String),

    #[error("intensity calibration exhausted grid {0:?} without observing drops")]
    CalibrationExhausted(Vec<f64>),

    #[error("forwarding error: {0}")]
    Forwarding(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error("missing forwarding rows: {0:?}")]
    MissingRows(Vec<(usize, usize)>),

    #[error("feature layout mismatch: {0}")]
    FeatureLayout(String),

    #[error("non-finite loss in update: {0}")]
    NonFiniteLoss(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
