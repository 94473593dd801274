use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A name or option that does not map to anything known.
    #[error("configuration error: {0}")]
    Config(String),

    /// Inputs that violate a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// The structural model is singular. `null_vector` is an approximate
    /// kernel vector over the free degrees of freedom.
    #[error("modeling error: {message}")]
    Modeling { message: String, null_vector: Vec<f64> },

    /// A derived quantity could not be estimated from the data given.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Tensor shapes that do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A non-finite value appeared during a numerical procedure.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Broken internal consistency, e.g. unmerged duplicate nodes.
    #[error("internal consistency error: {0}")]
    Internal(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
