use thiserror::Error;

use crate::search::SworSample;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A model or corpus file could not be parsed.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    /// Rejection sampling ran out of draws; carries whatever was collected.
    #[error(
        "draw budget of {max_draws} exhausted with {} of {k} distinct sequences",
        partial.entries.len()
    )]
    Budget {
        max_draws: usize,
        k: usize,
        partial: Box<SworSample>,
    },

    /// An estimator was handed a sample that does not satisfy its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Full enumeration would exceed the configured leaf budget.
    #[error("enumeration exceeds budget of {0} complete sequences")]
    EnumerationBudget(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
