use thiserror::Error;

/// Errors produced by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The SVR solver hit its iteration cap; `best` is the last iterate.
    #[error("svr solver did not converge: KKT violation {violation:.3e} after {iterations} iterations")]
    SvrNotConverged {
        violation: f64,
        iterations: usize,
        best: Box<crate::hsvr::SvrModel>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
