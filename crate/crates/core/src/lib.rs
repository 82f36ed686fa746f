//! Numerical laboratory for Kolmogorov-type operators on Lipschitz graph domains.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Stencil kernels index several arrays with one loop variable.
#![allow(clippy::needless_range_loop)]

pub mod analyze;
pub mod cli;
pub mod domain;
pub mod dyadic;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod homogenize;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
