//! Adaptive additive angular margin training on the unit hypersphere.
//!
//! The crate is `no_std` and only needs `alloc`. Everything here is a pure
//! function of its inputs plus an explicit seed; file formats and the
//! command-line driver live in the `kappaface` companion crate.
//!
//! Layout:
//! - [`sphere`]: normalization, resultant length, vMF density, concentration
//!   estimate and sampling.
//! - [`class_stats`]: the per-sample EMA memory buffer and per-class
//!   concentrations.
//! - [`scheduler`]: concentration and population weights and the per-class
//!   margin calibration `psi`.
//! - [`losses`]: forward and analytic backward passes for the margin-loss
//!   family.
//! - [`model`]: a small MLP embedding network, the classifier matrix and SGD.
//! - [`data`]: imbalanced vMF-mixture datasets and verification pairs.
//! - [`trainer`]: the epoch loop with end-of-epoch margin refresh.
//! - [`eval`]: verification metrics over pair lists.
#![no_std]
// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod class_stats;
pub mod data;
mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod scheduler;
mod special;
pub mod sphere;
pub mod trainer;

pub use error::{Error, Result};
