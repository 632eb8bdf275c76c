use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular operator: {0}")]
    SingularOperator(String),

    /// A coefficient became NaN or infinite. `time` is the first time at which
    /// the state was found non-finite.
    #[error("solution blew up at t = {time} (step {step})")]
    BlowUp { time: f64, step: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
