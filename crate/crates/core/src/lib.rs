//! Exactly solvable nonlinear-volatility diffusions with affine drift.

pub mod classify;
pub mod error;
pub mod logvalue;
pub mod montecarlo;
pub mod numerics;
pub mod specfun;
pub mod transform;
pub mod underlying;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use logvalue::LogValue;
