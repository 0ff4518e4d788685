#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Remez exchange did not converge: {0}")]
    Nonconvergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;
