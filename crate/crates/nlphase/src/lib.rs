//! Discretization, evaluation and minimization of nonlocal phase-transition
//! energies `K_R(u) + int_{B_R} W(u)` on uniform lattices.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod energy;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod kernels;
pub mod minimize;
pub mod potentials;
mod sum;

pub use error::{Error, Result};
