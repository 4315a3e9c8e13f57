//! Overcomplete tensor decomposition by simultaneous diagonalization of
//! Khatri-Rao flattenings, with a smoothed-analysis laboratory and
//! method-of-moments learners for multi-view mixtures and axis-aligned
//! Gaussian mixtures.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod decompose;
pub mod error;
pub mod gaussians;
pub mod io;
pub mod linalg;
pub mod multiview;
pub mod planted;
pub mod rng;
pub mod smoothed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, FactorSet, Matrix};
