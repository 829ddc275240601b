//! Time warping, relativistic rendering and direct/global separation.

pub mod relativistic;
pub mod separation;
pub mod warp;

pub use relativistic::{aberrate_cos, aberrate_direction, doppler_factor, lorentz_factor, render_relativistic, RelativisticCamera};
pub use separation::{fit_gmm, separate_direct_global, separate_histogram, GmmComponent, GmmFit, Separation};
pub use warp::{render_depth_map, warp_video, warp_with_depth, ReferenceSurface, WarpMode, WarpSign, WarpSpec};
