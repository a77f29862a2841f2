//! nnSAM: an auto-configured encoder-decoder segmentation network with a
//! frozen plug-in image encoder and a level-set regression head.
//!
//! Numerics (losses, level sets, metrics, planning) live in `nnsam-core`;
//! this crate adds the network, data handling, file formats and the
//! training harness behind the `nnsam` binary.

pub mod archive;
pub mod checkpoint;
pub mod data;
pub mod encoder;
mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pngio;
pub mod predict;
pub mod report;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
