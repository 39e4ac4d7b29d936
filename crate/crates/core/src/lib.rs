//! Vessel depth estimation and 3D reconstruction for en face angiograms.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`phantom`] – deterministic synthetic vessel trees with exact ground truth.
//! 2. [`scnet`] – structure-constrained encoder/decoder predicting a depth map
//!    and a vessel map, with hand-written backward passes.
//! 3. [`losses`] – segmentation MSE, region-weighted depth MSE and an SSIM term.
//! 4. [`vesselgraph`] – thinning, junction detection, segment decomposition and
//!    relinking into a vessel graph.
//! 5. [`recon3d`] – depth lifting, resampling, tube sweeping and mesh export.
//! 6. [`metrics`] – δ-accuracy, ARD, RMSE, SSIM, Chamfer and Hausdorff distances.
//! 7. [`pipeline`] – configuration and the command implementations behind the CLI.

pub mod error;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod raster;
pub mod real;
pub mod recon3d;
pub mod scnet;
pub mod ssim;
pub mod vesselgraph;

pub use error::{Error, Result};
pub use real::Real;
