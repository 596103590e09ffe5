use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate conditioning: {0}")]
    DegenerateConditioning(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("retraction singularity: x + xi vanishes")]
    RetractionSingularity,

    #[error("invalid band: {0}")]
    InvalidBand(String),

    #[error("spec rejected: {0}")]
    SpecRejected(String),

    #[error("all {} restarts failed: {}", .0.len(), .0.join("; "))]
    SolveFailure(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
