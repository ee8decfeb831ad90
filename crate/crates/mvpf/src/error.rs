use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Every raw likelihood weight underflowed to zero, so the weight vector
    /// cannot be normalized. With log-space weighting this only happens for
    /// non-finite inputs.
    #[error("all weights are zero after exponentiation")]
    WeightUnderflow,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
