//! Numerical solvers for the BCS gap equation.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod contraction;
pub mod error;
pub mod kernel;
pub mod params;
pub mod quadrature;
pub mod simple_gap;
pub mod solver;

pub use error::{GapError, Result};
pub use params::{PhysicalParams, SolverConfig};
