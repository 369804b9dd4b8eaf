use alloc::string::String;

/// Errors raised by the estimation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid measurement grid: {0}")]
    InvalidGrid(String),
    #[error("subject {id}: {reason}")]
    InvalidSubject { id: u64, reason: String },
    #[error("duplicate subject id {0}")]
    DuplicateId(u64),
    #[error("tied event times at {time} (subjects {first} and {second})")]
    TiedEventTimes { time: f64, first: u64, second: u64 },
    #[error("dataset has no uncensored subjects")]
    NoEvents,
    #[error("insufficient data: need at least {needed} subjects, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("posterior mode search failed for subject {id}")]
    ModeSearch { id: u64 },
    #[error("non-finite value in {what} (subject {id:?})")]
    NonFinite { what: &'static str, id: Option<u64> },
    #[error("risk set at event time {time} has zero weight")]
    DegenerateRiskSet { time: f64 },
    #[error("empty risk set at event time {time}")]
    EmptyRiskSet { time: f64 },
    #[error(
        "loglik ascent failed at iteration {iteration}: {before} -> {after} after {halvings} halvings"
    )]
    AscentFailure {
        iteration: usize,
        before: f64,
        after: f64,
        halvings: usize,
    },
    #[error("information operator is singular (condition number {cond:e})")]
    SingularOperator { cond: f64 },
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("dataset and truths are misaligned: {0}")]
    Misaligned(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
