use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of a function (e.g. x = 0).
    #[error("domain error: {0}")]
    Domain(String),
    /// Misuse of the API: wrong family, mismatched grids, bad parameters.
    #[error("usage error: {0}")]
    Usage(String),
    /// Input data that cannot be processed (non-finite energy, bad file).
    #[error("input error: {0}")]
    Input(String),
    /// A numerical precondition failed (e.g. a fixed-point map did not contract).
    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
