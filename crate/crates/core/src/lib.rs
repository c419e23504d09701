//! Core of the spectral distillation framework.
//!
//! Everything here needs only `alloc`: dense tensors with tape-based
//! reverse-mode differentiation, the transformer and fully connected
//! building blocks, the spectral adaptation unit, teacher/student
//! distillation, geospatial pairing and splitting, the synthetic world
//! generator, and the training harness. File formats, the CLI, and
//! report rendering live in the `spectral-distill` crate.
//!
//! The `std` feature (on by default) only enables runtime CPU feature
//! detection in the matrix-multiply kernel.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distill;
pub mod error;
pub mod geopair;
pub mod numerics;
pub mod pipeline;
pub mod sau;
pub mod spectra;
pub mod synthgen;

pub use error::{Error, Result};
