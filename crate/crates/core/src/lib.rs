//! Numeric core of the nnSAM segmentation stack.
//!
//! Everything in here is a pure function over in-memory grids: exact signed
//! distance transforms, the sigmoid-sharpened curvature field used as a shape
//! prior, the segmentation/regression losses together with their hand-derived
//! gradients, the evaluation metrics (DICE, average symmetric surface
//! distance) and the deterministic architecture planner.
//!
//! The crate is `no_std` and only needs an allocator. IO, the network itself
//! and the command line live in the `nnsam` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autoconfig;
pub mod edt;
mod error;
pub mod grid;
pub mod levelset;
pub mod losses;
pub mod metrics;

pub use error::{Error, Result};
pub use grid::Grid;
