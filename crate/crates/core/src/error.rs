use thiserror::Error;

use crate::text_format::ParseError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{0}")]
    Parse(#[from] ParseError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid stopping criterion: {0}")]
    InvalidCriterion(String),
    #[error("counter overflow applying rule {rule} at state {state}")]
    CounterOverflow { rule: usize, state: String },
    #[error("path is not connected at step {0}")]
    DisconnectedPath(usize),
    #[error("component is not irreducible")]
    NotIrreducible,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("resource bound exhausted: {0}")]
    ResourceExhausted(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("error budget {0:e} is below the float resolution of the solver")]
    BudgetUnderflow(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
