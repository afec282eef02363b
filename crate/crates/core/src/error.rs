use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("mean score is undefined for an empty library")]
    EmptyLibrary,

    #[error("invalid transition: {0}")]
    InvalidTransition(String),

    #[error("no valid action available in the current state")]
    NoValidAction,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("diversity needs at least two designs, got {0}")]
    UndefinedDiversity(usize),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::Dimension { expected, got }
    }
}
