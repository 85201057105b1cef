//! Exact transport and large-deviation quantities for run-and-tumble
//! particles on `Z^d` and for the continuum telegrapher process.
//!
//! Every analytic route in this crate has an independent companion route
//! (matrix inverse, matrix exponential, eigen solver, convex optimisation or
//! stochastic simulation) so that results can be cross-checked numerically.
//!
//! The crate is `no_std` and only needs `alloc`. Parallel drivers, file
//! formats and the command line live in the `tumble` crate.
#![cfg_attr(not(test), no_std)]
#![deny(missing_debug_implementations)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod free_energy;
pub mod linalg;
pub mod model;
pub mod simulator;
pub mod spectral;
pub mod stats;
pub mod transforms;

pub use error::{Error, Result};
pub use model::{
    build_1d_two_state, ContinuumModel, JumpKernel, LatticeModel, Model, OccupationMeasure,
    VelocityChain,
};

/// Complex scalar used throughout.
pub type Complex = num_complex::Complex<f64>;
