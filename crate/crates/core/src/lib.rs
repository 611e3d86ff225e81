//! Euler–Maruyama estimators for ergodic averages of multiscale diffusions,
//! together with the one-dimensional Poisson solver and effective-variance
//! computations used to check their LLN, CLT and moderate-deviation behaviour.

pub mod error;
pub mod harness;
pub mod euler;
pub mod model;
pub mod poisson1d;
pub mod quadrature;
pub mod variance;

pub use error::{Error, Result};
