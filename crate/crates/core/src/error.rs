use alloc::string::String;

/// Errors produced by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("index {index} out of range for {what} of length {len}")]
    Range {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("unsupported parameter: {0}")]
    Unsupported(&'static str),
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("linear system is singular")]
    Singular,
    #[error("actor {actor} segment overflow: capacity is {capacity}")]
    Overflow { actor: usize, capacity: usize },
    #[error("actor {actor} in-progress segment is not empty ({len} transitions)")]
    NotEmpty { actor: usize, len: usize },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("environment already terminated; reset before stepping")]
    Terminated,
    #[error("no entries to aggregate")]
    Empty,
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: u64,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
