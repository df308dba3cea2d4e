use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("unknown grasp type `{0}`")]
    UnknownGraspType(String),

    #[error("pressure {pressure} psi outside [{min}, {max}]")]
    PressureOutOfRange { pressure: f64, min: f64, max: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("belief underflow: all posterior mass vanished")]
    BeliefUnderflow,

    #[error("malformed script: {0}")]
    MalformedScript(String),

    #[error("episode log is empty")]
    EmptyLog,

    #[error("malformed episode log: {0}")]
    MalformedLog(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
