use thiserror::Error;

/// Errors raised by the SCOPF toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("disconnected network: reduced susceptance matrix is singular")]
    DisconnectedNetwork,

    #[error("invalid case: {0}")]
    InvalidCase(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
