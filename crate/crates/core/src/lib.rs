//! Simulation and weak-error verification for the stochastic heat equation on
//! (0,1) driven by impulsive space-time noise.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem;
pub mod harness;
pub mod mc;
pub mod noise;
pub mod oracle;
pub mod quad;
pub mod schemes;
pub mod spectral;

pub use error::{Error, Result};
