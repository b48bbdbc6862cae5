//! Sparse recovery with the logarithmic surrogate `h(x) = log(1 + |x|^q / p)`.
//!
//! The crate is organised bottom-up:
//!
//! - [`surrogate`]: the scalar surrogate, its vector norm and the IRLS weight diagonals.
//! - [`numerics`]: weighted minimum-norm solves, support least squares, an l1 initializer.
//! - [`solver`]: the fixed-point IRLS for `min ||x||_h s.t. Ax = b` and the thresholded
//!   variant used for the box / infinity-norm constrained model.
//! - [`conditions`]: coherence, brute-force RIP, sampled null-space constants.
//! - [`oracles`]: exhaustive l0 minimization and multiset recovery from power sums.
//! - [`tdoa`]: TDOA forward model, simulator and the moment-based sparse system.
//! - [`locator`]: the grid-based multi-source location pipeline with off-grid refinement.
//! - [`montecarlo`]: seeded Monte Carlo sweeps over target count, receivers and noise.
//!
//! With the default `parallel` feature, batch loops (Monte Carlo trials, refinement
//! candidates, support enumeration) run on rayon; without it they run sequentially and
//! produce identical results.

// `!(x > 0.0)` deliberately rejects NaN along with nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod locator;
pub mod montecarlo;
pub mod numerics;
pub mod oracles;
pub mod par;
pub mod solver;
pub mod surrogate;
pub mod tdoa;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};

/// 2-D position in meters.
pub type Point = [f64; 2];
