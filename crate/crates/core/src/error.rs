use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("command {index} of `{routine}` has non-positive duration")]
    NonPositiveDuration { routine: String, index: usize },
    #[error("routine `{0}` has no commands")]
    EmptyRoutine(String),
    #[error("scenario constraints are cyclic through `{0}`")]
    CyclicConstraints(String),
    #[error("oracle bound exceeded: {0} committed routines (max {1})")]
    OracleTooLarge(usize, usize),
    #[error("serialization constraints are cyclic")]
    CyclicOrder,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
