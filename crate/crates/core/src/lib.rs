//! Generalized linear spectral statistics `tr f(S_n) B_n` of sample covariance
//! matrices: deterministic equivalents, CLT centering, mean and covariance by
//! contour integration, and a projection test for spiked eigenspaces.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod clt;
pub mod error;
pub mod fptest;
pub mod functionals;
pub mod models;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod stieltjes;

pub use num_complex::Complex64 as C64;

pub use error::{Error, Result};
