//! Numerical laboratory for elliptic measure on rough domains.
//!
//! The crate builds voxelized model domains, Christ-type dyadic cubes on their
//! boundaries, interior Whitney decompositions and sawtooth regions, and solves
//! non-symmetric divergence-form problems on them. On top of that it evaluates
//! the Carleson-type disagreement functionals, reverse Hölder constants and
//! square/non-tangential functionals used to study perturbations of elliptic
//! measure.

// `!(x > 0.0)` guards reject NaN along with out-of-range values; index loops
// read better than zipped iterators where several arrays share one index.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod capacity;
pub mod carleson;
pub mod coefficients;
pub mod domain;
pub mod dyadic;
pub mod error;
pub mod experiments;
pub mod perturbation;
pub mod regions;
pub mod sfnt;
pub mod solver;
pub mod sparse;
pub mod whitney;

pub use error::{Error, Result};
