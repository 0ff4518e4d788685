use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("point {index} = {point:?} lies outside the domain")]
    DomainViolation { index: usize, point: Vec<f64> },

    #[error("agent {agent} left the domain at t = {time}")]
    DomainExit { time: f64, agent: usize },

    #[error("leader {leader} left the domain at t = {time}")]
    LeaderExit { time: f64, leader: usize },

    #[error("non-finite state encountered at t = {time}")]
    NonFinite { time: f64 },

    #[error("moment trajectory diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("Gram matrix is singular on the quadrature grid")]
    SingularGram,

    #[error("Jacobian unavailable for this map")]
    JacobianUnavailable,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("expression error at {line}:{column}: {message}")]
    Expression {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
