use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {func}: {detail}")]
    Domain { func: &'static str, detail: String },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("invalid bracket [{lo}, {hi}]: f(lo) = {flo}, f(hi) = {fhi} do not differ in sign")]
    InvalidBracket { lo: f64, hi: f64, flo: f64, fhi: f64 },

    #[error("negative density {value} at x = {x}")]
    NegativeDensity { x: f64, value: f64 },

    #[error("total mass {mass} exceeds one beyond tolerance {tol}")]
    MassExceedsOne { mass: f64, tol: f64 },

    #[error("value {value} lies outside the open state space ({lo}, {hi})")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParameter(String),

    #[error("map is not certified monotone: {rule}")]
    NotMonotone { rule: String },

    #[error("refused: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(func: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        func,
        detail: detail.into(),
    }
}
