//! Rendering from a camera moving at a fraction of the speed of light.
//!
//! Camera frame `n` sees scene time `n * gamma` (time dilation) from an origin
//! that has advanced `beta * c * W` per scene bin. Each pixel ray is mapped
//! through the aberration formula and its radiance scaled by the Doppler
//! factor raised to `doppler_exponent`.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Ray};
use crate::error::{Error, Result};
use crate::field::TransientFieldGrid;
use crate::histogram::sample_linear;
use crate::render::{render_traced, FrameSequence, RayTrace, RenderConfig};
use crate::SPEED_OF_LIGHT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativisticCamera {
    pub beta: f64,
    pub motion_direction: [f64; 3],
    pub base_camera: CameraModel,
    pub doppler_exponent: i32,
}

impl RelativisticCamera {
    pub fn new(base_camera: CameraModel, motion_direction: Vector3<f64>, beta: f64) -> Result<Self> {
        let c = Self {
            beta,
            motion_direction: motion_direction.normalize().into(),
            base_camera,
            doppler_exponent: 3,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        let m = Vector3::from(self.motion_direction);
        if !((m.norm() - 1.0).abs() < 1e-9) {
            return Err(Error::Config("motion direction must be a unit vector".into()));
        }
        self.base_camera.validate()
    }

    pub fn gamma(&self) -> f64 {
        lorentz_factor(self.beta)
    }
}

pub fn lorentz_factor(beta: f64) -> f64 {
    1.0 / (1.0 - beta * beta).sqrt()
}

/// Scene-frame angle cosine of a ray leaving the moving camera at `cos_theta`
/// from the motion direction.
pub fn aberrate_cos(cos_theta: f64, beta: f64) -> f64 {
    (cos_theta - beta) / (1.0 - beta * cos_theta)
}

/// Doppler factor `1 / (gamma (1 - beta cos theta))` for camera-frame angle `theta`.
pub fn doppler_factor(cos_theta: f64, beta: f64) -> f64 {
    1.0 / (lorentz_factor(beta) * (1.0 - beta * cos_theta))
}

/// Maps a camera-frame direction to the scene frame, keeping its azimuth about `motion`.
pub fn aberrate_direction(d: &Vector3<f64>, motion: &Vector3<f64>, beta: f64) -> Vector3<f64> {
    let c = d.dot(motion).clamp(-1.0, 1.0);
    let perp = d - motion * c;
    let pn = perp.norm();
    let c2 = aberrate_cos(c, beta);
    if pn < 1e-12 {
        return motion * c2.signum();
    }
    let s2 = (1.0 - c2 * c2).max(0.0).sqrt();
    motion * c2 + perp * (s2 / pn)
}

pub fn render_relativistic(grid: &TransientFieldGrid, cam: &RelativisticCamera, cfg: &RenderConfig) -> Result<FrameSequence> {
    cam.validate()?;
    cfg.validate()?;
    let base = &cam.base_camera;
    let (w, h) = (base.width as usize, base.height as usize);
    let n_bins = grid.n_bins();
    let channels = grid.channels();
    let beta = cam.beta;
    let gamma = cam.gamma();
    let motion = Vector3::from(cam.motion_direction);
    let step = beta * SPEED_OF_LIGHT * grid.bin_width_s();
    let mut frames = Vec::with_capacity(n_bins);
    for n in 0..n_bins {
        let scene_t = n as f64 * gamma;
        let frame_cam = if beta == 0.0 {
            base.clone()
        } else {
            base.with_center(base.center() + motion * (step * scene_t))
        };
        let rows: Vec<Vec<f64>> = (0..h)
            .into_par_iter()
            .map(|row| -> Result<Vec<f64>> {
                let mut trace = RayTrace::default();
                let mut buf = Vec::with_capacity(w * channels);
                for col in 0..w {
                    let ray = frame_cam.pixel_center_ray(col as u32, row as u32)?;
                    let (ray, scale) = if beta == 0.0 {
                        (ray, 1.0)
                    } else {
                        let cos = ray.direction.dot(&motion);
                        let d = aberrate_direction(&ray.direction, &motion, beta);
                        let r = Ray::new(ray.origin, d)?.with_bounds(ray.s_near, ray.s_far)?;
                        (r, doppler_factor(cos, beta).powi(cam.doppler_exponent))
                    };
                    render_traced(grid, &ray, cfg, cfg.pixel_seed(row * w + col), &mut trace)?;
                    let out = trace.output();
                    for c in 0..channels {
                        let bins = &out[c * n_bins..(c + 1) * n_bins];
                        let v = if beta == 0.0 {
                            bins[n].max(0.0)
                        } else {
                            scale * sample_linear(bins, scene_t).max(0.0)
                        };
                        buf.push(v);
                    }
                }
                Ok(buf)
            })
            .collect::<Result<_>>()?;
        frames.push(rows.concat());
    }
    Ok(FrameSequence {
        height: h,
        width: w,
        channels,
        frames,
    })
}
