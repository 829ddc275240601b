//! Time warping of rendered transients by per-ray distances.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Ray};
use crate::error::{Error, Result};
use crate::field::TransientFieldGrid;
use crate::histogram::shift_add;
use crate::render::{depth_from_trace, render_traced, RayTrace, RenderConfig};
use crate::video::TransientVideo;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSurface {
    Sphere { center: [f64; 3], radius: f64 },
    /// Points with `normal . x = offset`.
    Plane { normal: [f64; 3], offset: f64 },
}

impl ReferenceSurface {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ReferenceSurface::Sphere { radius, .. } if !(radius > 0.0) => {
                Err(Error::Config("reference sphere radius must be positive".into()))
            }
            ReferenceSurface::Plane { normal, .. } if Vector3::from(normal).norm() < 1e-12 => {
                Err(Error::Config("reference plane normal must be nonzero".into()))
            }
            _ => Ok(()),
        }
    }

    /// Nearest forward intersection distance along `ray`.
    pub fn intersect(&self, ray: &Ray) -> Option<f64> {
        match *self {
            ReferenceSurface::Sphere { center, radius } => {
                let oc = ray.origin - Vector3::from(center);
                let b = oc.dot(&ray.direction);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [-b - sq, -b + sq].into_iter().find(|t| *t >= 0.0)
            }
            ReferenceSurface::Plane { normal, offset } => {
                let n = Vector3::from(normal);
                let den = n.dot(&ray.direction);
                if den.abs() < 1e-15 {
                    return None;
                }
                let t = (offset - n.dot(&ray.origin)) / den;
                (t >= 0.0).then_some(t)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpMode {
    /// Distance from the camera to the expected termination point.
    Depth,
    /// Distance from a reference surface to the expected termination point.
    Reference(ReferenceSurface),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarpSign {
    RemoveDelay,
    AddDelay,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpSpec {
    pub mode: WarpMode,
    pub sign: WarpSign,
}

impl WarpSpec {
    /// Delay in bins to apply to a ray terminating at `depth`; `None` leaves it unwarped.
    pub fn shift_bins(&self, ray: &Ray, depth: f64, bin_width_s: f64) -> Option<f64> {
        let dist = match self.mode {
            WarpMode::Depth => depth,
            WarpMode::Reference(surf) => depth - surf.intersect(ray)?,
        };
        let bins = crate::distance_to_bins(dist, bin_width_s);
        Some(match self.sign {
            WarpSign::RemoveDelay => -bins,
            WarpSign::AddDelay => bins,
        })
    }

    pub fn inverse(&self) -> Self {
        Self {
            mode: self.mode,
            sign: match self.sign {
                WarpSign::RemoveDelay => WarpSign::AddDelay,
                WarpSign::AddDelay => WarpSign::RemoveDelay,
            },
        }
    }
}

/// Shifts every channel block of `pixel` by `delta` bins.
pub fn shift_pixel(pixel: &[f64], n_bins: usize, delta: f64) -> Vec<f64> {
    let mut out = vec![0.0; pixel.len()];
    for (src, dst) in pixel.chunks(n_bins).zip(out.chunks_mut(n_bins)) {
        shift_add(src, delta, 1.0, dst);
    }
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Per-pixel expected termination depth of a rendered image.
pub fn render_depth_map(grid: &TransientFieldGrid, cam: &CameraModel, cfg: &RenderConfig) -> Result<Vec<f64>> {
    let (video, depth) = render_with_depth(grid, cam, cfg)?;
    drop(video);
    Ok(depth)
}

fn render_with_depth(grid: &TransientFieldGrid, cam: &CameraModel, cfg: &RenderConfig) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    cfg.validate()?;
    cam.validate()?;
    let w = cam.width as usize;
    let rows: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..cam.height as usize)
        .into_par_iter()
        .map(|row| -> Result<_> {
            let mut trace = RayTrace::default();
            let mut px = Vec::with_capacity(w);
            let mut depth = Vec::with_capacity(w);
            for col in 0..w {
                let ray = cam.pixel_center_ray(col as u32, row as u32)?;
                render_traced(grid, &ray, cfg, cfg.pixel_seed(row * w + col), &mut trace)?;
                px.push(trace.output().iter().map(|v| v.max(0.0)).collect());
                depth.push(depth_from_trace(&trace, cfg.s_far.min(ray.s_far)));
            }
            Ok((px, depth))
        })
        .collect::<Result<_>>()?;
    let mut px = Vec::new();
    let mut depth = Vec::new();
    for (p, d) in rows {
        px.extend(p);
        depth.extend(d);
    }
    Ok((px, depth))
}

/// Warps an existing video given per-pixel depths.
pub fn warp_with_depth(video: &TransientVideo, cam: &CameraModel, depth: &[f64], spec: &WarpSpec) -> Result<TransientVideo> {
    if depth.len() != video.n_pixels() || cam.n_pixels() != video.n_pixels() {
        return Err(Error::shape("depth map", video.n_pixels(), depth.len()));
    }
    if let WarpMode::Reference(s) = spec.mode {
        s.validate()?;
    }
    let mut out = video.clone();
    let w = cam.width as usize;
    for (i, d) in depth.iter().enumerate() {
        let ray = cam.pixel_center_ray((i % w) as u32, (i / w) as u32)?;
        if let Some(delta) = spec.shift_bins(&ray, *d, video.bin_width_s()) {
            let shifted = shift_pixel(video.pixel(i), video.n_bins(), delta);
            out.set_pixel(i, &shifted)?;
        }
    }
    Ok(out)
}

/// Renders `cam` and warps each pixel by its distance rule.
pub fn warp_video(grid: &TransientFieldGrid, cam: &CameraModel, cfg: &RenderConfig, spec: &WarpSpec) -> Result<TransientVideo> {
    let (px, depth) = render_with_depth(grid, cam, cfg)?;
    let data = px.concat();
    let video = TransientVideo::from_data(
        cam.height as usize,
        cam.width as usize,
        grid.channels(),
        grid.n_bins(),
        grid.bin_width_s(),
        cfg.t0_offset_bins,
        data,
    )?;
    warp_with_depth(&video, cam, &depth, spec)
}
