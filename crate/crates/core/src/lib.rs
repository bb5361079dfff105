//! Hypocoercive gradient bounds for sub-Riemannian diffusions.
//!
//! The crate covers exact polynomial vector-field algebra ([`polyfield`]),
//! a catalog of geometries ([`geometry`]), the curvature-type constants behind
//! the gradient bounds ([`constants`]), the SDE integrators ([`sde`]), Monte
//! Carlo checks of the semigroup inequalities ([`semigroup`]) and the
//! infinite-dimensional lattice extension ([`lattice`]).

// `!(x > 0.0)` guards deliberately reject NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the tensor formulas they implement
#![allow(clippy::needless_range_loop)]

pub mod constants;
pub mod exec;
pub mod geometry;
pub mod lattice;
pub mod observable;
pub mod polyfield;
pub mod rng;
pub mod scalar;
pub mod sde;
pub mod semigroup;
pub mod stats;
