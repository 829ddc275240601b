//! Transient fields: a voxel density grid carrying a time-resolved radiance
//! histogram per voxel, fitted to multi-view transient videos and rendered
//! from arbitrary static or moving viewpoints with the camera propagation
//! delay applied per sample.
//!
//! The crate is organised bottom-up:
//!
//! - [`histogram`], [`camera`], [`video`]: shared domain types and geometry.
//! - [`field`]: the optimizable [`TransientFieldGrid`] with its backward pass.
//! - [`render`]: delay-aware volume rendering and its exact gradient.
//! - [`optim`]: gamma-compressed loss, Adam, and the training loop.
//! - [`sim`]: analytic ground-truth transport and the SPAD measurement model.
//! - [`metrics`]: transient IoU, PSNR and SSIM.
//! - [`apps`]: time warping, relativistic rendering, direct/global separation.
//! - [`io`]: on-disk formats for videos, cameras, checkpoints and manifests.

pub mod apps;
pub mod camera;
pub mod error;
pub mod field;
pub mod histogram;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod rng;
pub mod sim;
pub mod video;

pub use camera::{CameraModel, Ray};
pub use error::{Error, Result};
pub use field::{FieldGradient, FieldSample, TransientFieldGrid};
pub use histogram::TransientHistogram;
pub use render::RenderConfig;
pub use video::TransientVideo;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Converts a path length in meters to a duration in bins of width `bin_width_s`.
#[inline]
pub fn distance_to_bins(distance_m: f64, bin_width_s: f64) -> f64 {
    distance_m / (SPEED_OF_LIGHT * bin_width_s)
}
