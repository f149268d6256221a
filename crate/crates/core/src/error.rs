use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration blew up at t = {time}: state is no longer finite")]
    IntegrationBlowup { time: f64 },

    #[error("velocity is not horizontal: least-squares residual {residual:e} exceeds {tolerance:e}")]
    NotHorizontal { residual: f64, tolerance: f64 },

    #[error(
        "corank increased from {previous} at t = {previous_time} to {current} at t = {time} \
         with rank tolerance {tolerance:e}; the corank function is nonincreasing, try adjusting the tolerance"
    )]
    CorankNotMonotone {
        previous_time: f64,
        previous: usize,
        time: f64,
        current: usize,
        tolerance: f64,
    },

    #[error("covector is not an abnormal direction along the segment: residual {residual:e} (tolerance {tolerance:e})")]
    InvalidAbnormalDirection { residual: f64, tolerance: f64 },

    #[error("expression error at position {position}: {message}")]
    Expression { position: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
