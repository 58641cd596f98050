//! Point-set voting for partial point cloud analysis.
//!
//! A point cloud is partitioned into overlapping local point sets. A
//! shared-weight encoder turns each set into a diagonal-Gaussian vote in
//! latent space; the votes are combined in closed form into the
//! maximum-probability latent, which task heads decode for classification,
//! per-point part segmentation and shape completion. Training on complete
//! clouds with random vote dropping makes inference robust to partial inputs.

pub mod cli;
pub mod data;
pub mod encoder;
pub mod geometry;
pub mod heads;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod voting;

mod error;

pub use error::{Error, Result};
