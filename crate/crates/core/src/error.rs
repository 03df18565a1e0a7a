use thiserror::Error;

/// Errors produced by parsing or evaluating coefficient expressions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("arity mismatch: expression takes {expected} argument(s), got {got}")]
    Arity { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("singular system at step {step}: {msg}")]
    Singular { step: usize, msg: String },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("point x = {x} lies outside [0, {l}]")]
    OutOfDomain { x: f64, l: f64 },
    #[error("mismatched discretization: {0}")]
    Mismatch(String),
    #[error("non-finite objective at both sides of coordinate {0}")]
    NonFiniteGradient(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ (Error::Singular { .. } | Error::Step { .. }) => e,
            other => Error::Step {
                step,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
