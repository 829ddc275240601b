//! Analytic transient transport: direct light plus one diffuse bounce.
//!
//! Values are expected photons per pulse arriving through the pixel, per bin.
//! A surface point `x` lit with irradiance `E` reflects radiance
//! `albedo * E / pi`; the pixel records the radiance of its first hit.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::scene::{AnalyticScene, Hit, LightKind, Pulse, RAY_EPS};
use crate::camera::Ray;
use crate::error::{Error, Result};
use crate::histogram::TransientHistogram;
use crate::SPEED_OF_LIGHT;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeBinning {
    pub n_bins: usize,
    pub bin_width_s: f64,
    /// Bin `n` is centered at `(n + t0_offset_bins) * bin_width_s`.
    pub t0_offset_bins: f64,
}

impl TimeBinning {
    pub fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || !(self.bin_width_s > 0.0) || !self.t0_offset_bins.is_finite() {
            return Err(Error::Config("binning needs N >= 1, W > 0 and a finite origin".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    /// Indirect gather directions per axis; the set has `n * n` members.
    pub indirect_strata: usize,
    pub indirect: bool,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            indirect_strata: 16,
            indirect: true,
        }
    }
}

/// Adds `amount` arriving at time `t_s`, spread by the pulse profile.
pub fn deposit(bins: &mut [f64], t_s: f64, amount: f64, pulse: &Pulse, b: &TimeBinning) {
    let x = t_s / b.bin_width_s - b.t0_offset_bins;
    let sigma = pulse.sigma_s() / b.bin_width_s;
    let n = bins.len() as i64;
    if sigma <= 0.0 {
        let k = x.round() as i64;
        if (0..n).contains(&k) {
            bins[k as usize] += amount;
        }
        return;
    }
    let lo = ((x - 7.0 * sigma).floor() as i64).max(0);
    let hi = ((x + 7.0 * sigma).ceil() as i64).min(n - 1);
    let scale = 1.0 / (sigma * SQRT_2);
    let mut prev = if lo <= hi { erf((lo as f64 - 0.5 - x) * scale) } else { 0.0 };
    for k in lo..=hi {
        let next = erf((k as f64 + 0.5 - x) * scale);
        bins[k as usize] += amount * 0.5 * (next - prev);
        prev = next;
    }
}

/// Irradiance at a surface point from the light, and the light-to-point path length.
pub fn irradiance(scene: &AnalyticScene, p: &Vector3<f64>, n: &Vector3<f64>) -> Option<(f64, f64)> {
    let light = &scene.light;
    let pos = Vector3::from(light.position);
    match light.kind {
        LightKind::Point => {
            let to = pos - p;
            let d = to.norm();
            let cos = n.dot(&to) / d;
            if !(cos > 0.0) || d < RAY_EPS || scene.occluded(p, &pos) {
                return None;
            }
            Some((light.intensity * cos / (d * d), d))
        }
        LightKind::Collimated { direction, radius } => {
            let b = Vector3::from(direction);
            let rel = p - pos;
            let along = rel.dot(&b);
            let cos = -b.dot(n);
            if !(along > 0.0) || !(cos > 0.0) || (rel - b * along).norm() > radius {
                return None;
            }
            if scene.occluded(p, &(p - b * along)) {
                return None;
            }
            Some((light.intensity * cos, along))
        }
    }
}

fn frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let sign = 1f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        Vector3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        Vector3::new(b, sign + n.y * n.y * a, -n.y),
    )
}

/// Fixed cosine-weighted stratified directions around `n`.
pub fn gather_directions(n: &Vector3<f64>, strata: usize) -> Vec<Vector3<f64>> {
    let (t, b) = frame(n);
    let mut out = Vec::with_capacity(strata * strata);
    for i in 0..strata {
        for j in 0..strata {
            let u1 = (i as f64 + 0.5) / strata as f64;
            let u2 = (j as f64 + 0.5) / strata as f64;
            let r = u1.sqrt();
            let phi = 2.0 * PI * u2;
            out.push((t * (r * phi.cos()) + b * (r * phi.sin()) + n * (1.0 - u1).sqrt()).normalize());
        }
    }
    out
}

fn reflected(scene: &AnalyticScene, hit: &Hit) -> Option<(f64, f64)> {
    let albedo = scene.surfaces[hit.surface].albedo;
    irradiance(scene, &hit.point, &hit.normal).map(|(e, d)| (albedo * e / PI, d))
}

/// Direct and one-bounce transient seen along `ray`.
pub fn ideal_transient_with(
    scene: &AnalyticScene,
    ray: &Ray,
    binning: &TimeBinning,
    cfg: &TransportConfig,
) -> Result<TransientHistogram> {
    binning.validate()?;
    let mut bins = vec![0.0; binning.n_bins];
    let pulse = scene.light.pulse;
    if let Some(hit) = scene.intersect(&ray.origin, &ray.direction, ray.s_near.max(0.0), ray.s_far) {
        if let Some((l, d_light)) = reflected(scene, &hit) {
            deposit(&mut bins, (d_light + hit.t) / SPEED_OF_LIGHT, l, &pulse, binning);
        }
        if cfg.indirect && cfg.indirect_strata > 0 {
            let albedo = scene.surfaces[hit.surface].albedo;
            let dirs = gather_directions(&hit.normal, cfg.indirect_strata);
            let w = albedo / dirs.len() as f64;
            for d in &dirs {
                let Some(y) = scene.intersect(&hit.point, d, RAY_EPS, f64::INFINITY) else {
                    continue;
                };
                if let Some((l, d_light)) = reflected(scene, &y) {
                    let t = (d_light + y.t + hit.t) / SPEED_OF_LIGHT;
                    deposit(&mut bins, t, w * l, &pulse, binning);
                }
            }
        }
    }
    Ok(TransientHistogram::from_clamped(
        bins,
        binning.bin_width_s,
        binning.t0_offset_bins,
    ))
}

pub fn ideal_transient(scene: &AnalyticScene, ray: &Ray, binning: &TimeBinning) -> Result<TransientHistogram> {
    ideal_transient_with(scene, ray, binning, &TransportConfig::default())
}

/// Earliest direct arrival time along `ray`, ignoring shadowing.
pub fn direct_path_time(scene: &AnalyticScene, ray: &Ray) -> Option<f64> {
    let hit = scene.intersect(&ray.origin, &ray.direction, ray.s_near.max(0.0), ray.s_far)?;
    let pos = Vector3::from(scene.light.position);
    let d_light = match scene.light.kind {
        LightKind::Point => (pos - hit.point).norm(),
        LightKind::Collimated { direction, .. } => (hit.point - pos).dot(&Vector3::from(direction)),
    };
    Some((d_light + hit.t) / SPEED_OF_LIGHT)
}
