//! Simulation and estimation toolkit for one-dimensional jump SDEs driven by a
//! Poisson point measure with a (possibly singular) intensity measure.
//!
//! The differential calculus works on jump *times*: the terminal value is
//! differentiated with respect to a single, well-chosen jump time per block,
//! and the resulting integration by parts formula (with its border terms) is
//! turned into Monte Carlo weights.
//!
//! Module map:
//! - [`measures`]: intensity measures with an exhaustion `E_n`, Poisson sampling.
//! - [`model`]: coefficient bundles, the non-degeneracy function `alpha`, hypothesis checks.
//! - [`sde`]: pathwise solver (ODE flow between jumps, jump map at jumps).
//! - [`flow`]: derivatives of the terminal value with respect to jump times.
//! - [`ibp`]: block structure, derivative/divergence/border operators, IBP estimators.
//! - [`estimators`]: experiment-level estimators and bound diagnostics.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod flow;
pub mod ibp;
pub mod measures;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod sde;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
