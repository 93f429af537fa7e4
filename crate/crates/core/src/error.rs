use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum SclbError {
    #[error("index out of range: {what} = {index} (bound {bound})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("failed to load data: {0}")]
    Load(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("backend unavailable: {0}")]
    Unavailable(String),
}

pub type Result<T> = std::result::Result<T, SclbError>;

pub(crate) fn check_index(what: &'static str, index: usize, bound: usize) -> Result<()> {
    if index < bound {
        Ok(())
    } else {
        Err(SclbError::Index { what, index, bound })
    }
}
