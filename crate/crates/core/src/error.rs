//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Reason a numeric operation left its domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("logarithm of a non-positive value")]
    LogNonPositive,
    #[error("square root of a negative value")]
    SqrtNegative,
    #[error("division by zero")]
    DivisionByZero,
    #[error("power with a negative base and fractional exponent")]
    PowNegativeBase,
    #[error("tangent argument outside the safe range")]
    TanOutOfRange,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unknown variable `{name}` at byte {position}")]
    UnknownVariable { name: String, position: usize },

    #[error("variable `{0}` is not bound in the evaluation environment")]
    UnboundVariable(String),

    #[error("exponent must be a constant expression (at byte {position})")]
    NonConstantExponent { position: usize },

    #[error("interval [{a},{b}] is invalid for horizon {horizon}")]
    BadInterval { a: i64, b: i64, horizon: usize },

    #[error("domain error: {0}")]
    Domain(#[from] DomainError),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("formula needs {required} trajectory steps but only {available} are available")]
    HorizonExceeded { required: usize, available: usize },

    #[error("weighted average requires at least one non-zero weight")]
    DegenerateWeights,

    #[error("operand list is empty")]
    EmptyList,

    #[error("no smoothing weights bound for disjunctive node {0}")]
    UnboundNode(u32),

    #[error("smoothing weights for node {node} have length {got}, expected {expected}")]
    BetaLength { node: u32, got: usize, expected: usize },

    #[error("non-finite gradient of {objective} at iteration {iter}")]
    NonFiniteGradient { iter: usize, objective: &'static str },

    #[error("confidence threshold {0} not present in the risk report")]
    BetaNotFound(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn syntax(position: usize, message: impl Into<String>) -> Self {
        Error::Syntax {
            position,
            message: message.into(),
        }
    }
}
