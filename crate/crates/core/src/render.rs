//! Delay-aware volume rendering of a transient field.
//!
//! Along a ray `r(s) = o + s d` the renderer draws one stratified sample per
//! stratum of width `delta`, composites
//!
//! ```text
//! out = sum_i T_i * alpha_i * shift(tau(r(s_i), d), s_i / (c W))
//! alpha_i = 1 - exp(-sigma_i * delta),   T_i = prod_{j<i} (1 - alpha_j)
//! ```
//!
//! and optionally adds a constant background with weight `T_end`. The
//! backward pass is the exact reverse-mode derivative of that estimator for
//! a fixed set of sample positions (same seed).

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Ray};
use crate::error::{Error, Result};
use crate::field::{FieldGradient, Stencil, TransientFieldGrid};
use crate::histogram::{shift_add, shift_adjoint, TransientHistogram};
use crate::rng;
use crate::video::TransientVideo;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Stratified samples per ray.
    pub n_samples: usize,
    pub s_near: f64,
    pub s_far: f64,
    /// Delay every sample by its distance to the camera (off for ablations).
    pub model_propagation_delay: bool,
    /// Adds an all-ones background transient weighted by the residual transmittance.
    pub white_background: bool,
    /// Jitter samples inside their strata; midpoints otherwise.
    pub jitter: bool,
    /// Stop marching once transmittance falls below this; 0 marches every sample.
    pub early_stop_transmittance: f64,
    /// Time origin of rendered histograms, in bins.
    pub t0_offset_bins: f64,
    /// Base seed of the per-ray sampling streams.
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            s_near: 0.0,
            s_far: 10.0,
            model_propagation_delay: true,
            white_background: false,
            jitter: true,
            early_stop_transmittance: 0.0,
            t0_offset_bins: 0.0,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Config(format!("n_samples must be >= 2, got {}", self.n_samples)));
        }
        if !(self.s_near >= 0.0 && self.s_near < self.s_far) {
            return Err(Error::Config(format!(
                "need 0 <= s_near < s_far, got [{}, {}]",
                self.s_near, self.s_far
            )));
        }
        if !(0.0..1.0).contains(&self.early_stop_transmittance) || !self.t0_offset_bins.is_finite() {
            return Err(Error::Config("early-stop threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Sampling seed of pixel `index` when rendering an image.
    pub fn pixel_seed(&self, index: usize) -> u64 {
        rng::derive_seed(&[self.seed, index as u64])
    }
}

#[derive(Clone, Copy, Debug)]
struct SampleRecord {
    s: f64,
    stencil: Option<Stencil>,
    sigma: f64,
    dsigma: f64,
    alpha: f64,
    transmittance: f64,
    weight: f64,
    m_pre: f64,
    delay: f64,
}

/// Forward-pass record of one ray, reusable across rays.
#[derive(Clone, Debug, Default)]
pub struct RayTrace {
    ray: Option<Ray>,
    seed: u64,
    n_samples: usize,
    delta: f64,
    samples: Vec<SampleRecord>,
    /// Softplus-activated transients (before modulation), one block per sample.
    sp: Vec<f64>,
    /// Slopes of `sp` with respect to the interpolated raw values.
    sig: Vec<f64>,
    basis: [f64; 9],
    t_end: f64,
    out: Vec<f64>,
    adj: Vec<f64>,
    e: Vec<f64>,
    d_tau: Vec<f64>,
    local: Vec<f64>,
}

impl RayTrace {
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.weight)
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.s)
    }

    pub fn transmittances(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.transmittance)
    }

    /// Rendered transient of the last forward pass (channel-major).
    pub fn output(&self) -> &[f64] {
        &self.out
    }

    pub fn residual_transmittance(&self) -> f64 {
        self.t_end
    }
}

/// Sampling interval of a ray: the configured range clipped to the ray's own
/// bounds and to the grid box. Outside the box the field is empty, so the
/// clip leaves the rendered integral unchanged.
fn segment(grid: &TransientFieldGrid, ray: &Ray, cfg: &RenderConfig) -> (f64, f64, bool) {
    let near = cfg.s_near.max(ray.s_near);
    let far = cfg.s_far.min(ray.s_far);
    let (lo, hi) = grid.aabb();
    match ray.intersect_aabb(&lo, &hi) {
        Some((a, b)) if a.max(near) < b.min(far) => (a.max(near), b.min(far), true),
        _ => (near, far, false),
    }
}

fn check_ray(ray: &Ray) -> Result<()> {
    if !ray.origin.iter().chain(ray.direction.iter()).all(|v| v.is_finite())
        || (ray.direction.norm() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidInput("ray must be finite with a unit direction".into()));
    }
    Ok(())
}

/// Runs the forward pass, leaving everything the backward pass needs in `trace`.
pub fn render_traced(
    grid: &TransientFieldGrid,
    ray: &Ray,
    cfg: &RenderConfig,
    seed: u64,
    trace: &mut RayTrace,
) -> Result<()> {
    check_ray(ray)?;
    let l = grid.pixel_len();
    let n_bins = grid.n_bins();
    trace.ray = Some(*ray);
    trace.seed = seed;
    trace.n_samples = cfg.n_samples;
    trace.samples.clear();
    trace.sp.clear();
    trace.sig.clear();
    trace.out.clear();
    trace.out.resize(l, 0.0);
    trace.basis = grid.direction_basis(&ray.direction);

    let (a, b, hits) = segment(grid, ray, cfg);
    let n = cfg.n_samples;
    let delta = (b - a) / n as f64;
    trace.delta = delta;
    let mut stream = rng::stream(&[seed]);
    let bin_shift = grid.t0_offset_bins() - cfg.t0_offset_bins;
    let mut depth: f64 = 0.0;
    let mut blk = vec![0.0; l];
    let mut slope = vec![0.0; l];
    for i in 0..n {
        let transmittance = (-depth).exp();
        if transmittance < cfg.early_stop_transmittance {
            break;
        }
        let u = if cfg.jitter { stream.gen::<f64>() } else { 0.5 };
        let s = a + (i as f64 + u) * delta;
        let stencil = if hits { grid.stencil(&ray.at(s)) } else { None };
        let (sigma, dsigma) = stencil.as_ref().map_or((0.0, 0.0), |st| grid.density_at(st));
        let alpha = -(-sigma * delta).exp_m1();
        let weight = transmittance * alpha;
        let delay = if cfg.model_propagation_delay {
            crate::distance_to_bins(s, grid.bin_width_s()) + bin_shift
        } else {
            0.0
        };
        let mut m_pre = 0.0;
        if let Some(st) = &stencil {
            grid.transient_softplus_at(st, &mut blk, &mut slope);
            m_pre = grid.modulation_at(st, &trace.basis);
            let m = m_pre.max(0.0);
            if weight > 0.0 && m > 0.0 {
                for c in 0..grid.channels() {
                    let r = c * n_bins..(c + 1) * n_bins;
                    shift_add(&blk[r.clone()], delay, weight * m, &mut trace.out[r]);
                }
            }
        }
        if stencil.is_none() {
            blk.fill(0.0);
            slope.fill(0.0);
        }
        trace.sp.extend_from_slice(&blk);
        trace.sig.extend_from_slice(&slope);
        trace.samples.push(SampleRecord {
            s,
            stencil,
            sigma,
            dsigma,
            alpha,
            transmittance,
            weight,
            m_pre,
            delay,
        });
        depth += sigma * delta;
    }
    trace.t_end = (-depth).exp();
    if cfg.white_background {
        trace.out.iter_mut().for_each(|v| *v += trace.t_end);
    }
    Ok(())
}

/// Scatters `dL/d out` of the traced ray into `grad`.
pub fn backward(
    grid: &TransientFieldGrid,
    trace: &mut RayTrace,
    ray: &Ray,
    cfg: &RenderConfig,
    seed: u64,
    upstream: &[f64],
    grad: &mut FieldGradient,
) -> Result<()> {
    let l = grid.pixel_len();
    if upstream.len() != l {
        return Err(Error::shape("render upstream", l, upstream.len()));
    }
    if trace.ray.as_ref() != Some(ray) || trace.seed != seed || trace.n_samples != cfg.n_samples {
        return Err(Error::Inconsistent(
            "trace was recorded for a different ray, seed or sample count".into(),
        ));
    }
    if trace.sp.len() != trace.samples.len() * l {
        return Err(Error::Inconsistent("trace does not match the grid layout".into()));
    }
    let n_bins = grid.n_bins();
    let k = trace.samples.len();
    let delta = trace.delta;

    // Per-sample adjoint of the shift and the scalar e_i = <g, shift(tau_i)>.
    let mut adj = std::mem::take(&mut trace.adj);
    let mut e = std::mem::take(&mut trace.e);
    let mut d_tau = std::mem::take(&mut trace.d_tau);
    let mut local = std::mem::take(&mut trace.local);
    adj.clear();
    adj.resize(k * l, 0.0);
    e.clear();
    e.resize(k, 0.0);
    d_tau.clear();
    d_tau.resize(l, 0.0);
    local.resize(l, 0.0);
    for (i, smp) in trace.samples.iter().enumerate() {
        if smp.stencil.is_none() {
            continue;
        }
        let u = &mut adj[i * l..(i + 1) * l];
        for c in 0..grid.channels() {
            let r = c * n_bins..(c + 1) * n_bins;
            shift_adjoint(&upstream[r.clone()], smp.delay, &mut u[r]);
        }
        let m = smp.m_pre.max(0.0);
        let sp = &trace.sp[i * l..(i + 1) * l];
        e[i] = m * sp.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    let e_bg = if cfg.white_background { upstream.iter().sum() } else { 0.0 };

    let mut suffix = 0.0;
    for i in (0..k).rev() {
        let smp = &trace.samples[i];
        let Some(st) = smp.stencil else {
            suffix += e[i] * smp.weight;
            continue;
        };
        let d_sigma = delta * (e[i] * smp.transmittance * (1.0 - smp.alpha) - suffix - trace.t_end * e_bg);
        let u = &adj[i * l..(i + 1) * l];
        for (d, a) in d_tau.iter_mut().zip(u) {
            *d = smp.weight * a;
        }
        grid.scatter(
            &st,
            d_sigma * smp.dsigma,
            &d_tau,
            &trace.sp[i * l..(i + 1) * l],
            &trace.sig[i * l..(i + 1) * l],
            smp.m_pre,
            &trace.basis,
            grad,
            &mut local,
        );
        suffix += e[i] * smp.weight;
    }
    trace.adj = adj;
    trace.e = e;
    trace.d_tau = d_tau;
    trace.local = local;
    check_finite(&trace.samples)?;
    Ok(())
}

fn check_finite(samples: &[SampleRecord]) -> Result<()> {
    if samples.iter().any(|s| !s.sigma.is_finite()) {
        return Err(Error::NonFinite {
            iteration: 0,
            block: "density",
        });
    }
    Ok(())
}

pub fn render_transient(
    grid: &TransientFieldGrid,
    ray: &Ray,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<TransientHistogram> {
    cfg.validate()?;
    let mut trace = RayTrace::default();
    render_traced(grid, ray, cfg, seed, &mut trace)?;
    Ok(TransientHistogram::from_clamped(
        trace.out,
        grid.bin_width_s(),
        cfg.t0_offset_bins,
    ))
}

/// Forward pass plus gradient scatter for one ray; returns the rendered transient.
pub fn render_transient_gradient(
    grid: &TransientFieldGrid,
    ray: &Ray,
    cfg: &RenderConfig,
    seed: u64,
    upstream: &[f64],
    grad: &mut FieldGradient,
) -> Result<TransientHistogram> {
    cfg.validate()?;
    let mut trace = RayTrace::default();
    render_traced(grid, ray, cfg, seed, &mut trace)?;
    backward(grid, &mut trace, ray, cfg, seed, upstream, grad)?;
    Ok(TransientHistogram::from_clamped(
        trace.out,
        grid.bin_width_s(),
        cfg.t0_offset_bins,
    ))
}

/// Transmittance before each sample, with the sample positions.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmittanceProfile {
    pub positions: Vec<f64>,
    pub transmittance: Vec<f64>,
}

pub fn render_transmittance(
    grid: &TransientFieldGrid,
    ray: &Ray,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<TransmittanceProfile> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.early_stop_transmittance = 0.0;
    let mut trace = RayTrace::default();
    render_traced(grid, ray, &cfg, seed, &mut trace)?;
    Ok(TransmittanceProfile {
        positions: trace.positions().collect(),
        transmittance: trace.transmittances().collect(),
    })
}

/// Floor on the accumulated weight below which a ray counts as empty.
pub const DEPTH_EPS: f64 = 1e-10;

/// Expected termination distance from a recorded trace.
pub fn depth_from_trace(trace: &RayTrace, s_far: f64) -> f64 {
    let total: f64 = trace.weights().sum();
    if total < DEPTH_EPS {
        return s_far;
    }
    let acc: f64 = trace.samples.iter().map(|s| s.weight * s.s).sum();
    acc / total.max(DEPTH_EPS)
}

pub fn render_depth(grid: &TransientFieldGrid, ray: &Ray, cfg: &RenderConfig, seed: u64) -> Result<f64> {
    cfg.validate()?;
    let mut trace = RayTrace::default();
    render_traced(grid, ray, cfg, seed, &mut trace)?;
    Ok(depth_from_trace(&trace, cfg.s_far.min(ray.s_far)))
}

fn check_camera_grid(grid: &TransientFieldGrid, cam: &CameraModel) -> Result<()> {
    cam.validate()?;
    if grid.channels() != 1 && grid.channels() != 3 {
        return Err(Error::Config("grid must have 1 or 3 channels".into()));
    }
    Ok(())
}

/// Renders every pixel of `cam` (pixel-parallel, deterministic per `cfg.seed`).
pub fn render_video_static(
    grid: &TransientFieldGrid,
    cam: &CameraModel,
    cfg: &RenderConfig,
) -> Result<TransientVideo> {
    cfg.validate()?;
    check_camera_grid(grid, cam)?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let l = grid.pixel_len();
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|row| -> Result<Vec<f64>> {
            let mut trace = RayTrace::default();
            let mut buf = Vec::with_capacity(w * l);
            for col in 0..w {
                let ray = cam.pixel_center_ray(col as u32, row as u32)?;
                render_traced(grid, &ray, cfg, cfg.pixel_seed(row * w + col), &mut trace)?;
                buf.extend(trace.output().iter().map(|v| v.max(0.0)));
            }
            Ok(buf)
        })
        .collect::<Result<_>>()?;
    TransientVideo::from_data(
        h,
        w,
        grid.channels(),
        grid.n_bins(),
        grid.bin_width_s(),
        cfg.t0_offset_bins,
        rows.concat(),
    )
}

/// Images of a moving camera; frame `n` holds bin `n` rendered under pose `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// One `height * width * channels` image per frame, `(row, col, channel)` order.
    pub frames: Vec<Vec<f64>>,
}

impl FrameSequence {
    pub fn max_value(&self) -> f64 {
        self.frames.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Bin `n` of every pixel, channels interleaved per pixel.
pub(crate) fn video_bin(video: &TransientVideo, n: usize) -> Vec<f64> {
    let nb = video.n_bins();
    let mut out = Vec::with_capacity(video.n_pixels() * video.channels());
    for px in video.pixels() {
        for c in 0..video.channels() {
            out.push(px[c * nb + n]);
        }
    }
    out
}

pub fn render_video_dynamic(
    grid: &TransientFieldGrid,
    trajectory: &[CameraModel],
    cfg: &RenderConfig,
) -> Result<FrameSequence> {
    let n = grid.n_bins();
    if trajectory.len() != n {
        return Err(Error::Config(format!(
            "trajectory needs exactly {n} poses (one per time bin), got {}",
            trajectory.len()
        )));
    }
    let first = &trajectory[0];
    if trajectory
        .iter()
        .any(|c| c.width != first.width || c.height != first.height)
    {
        return Err(Error::Config("all trajectory cameras must share one image size".into()));
    }
    let mut frames = Vec::with_capacity(n);
    let mut cached: Option<(&CameraModel, TransientVideo)> = None;
    for (i, cam) in trajectory.iter().enumerate() {
        let reuse = matches!(&cached, Some((c, _)) if *c == cam);
        if !reuse {
            cached = Some((cam, render_video_static(grid, cam, cfg)?));
        }
        let video = &cached.as_ref().expect("rendered above").1;
        frames.push(video_bin(video, i));
    }
    Ok(FrameSequence {
        height: first.height as usize,
        width: first.width as usize,
        channels: grid.channels(),
        frames,
    })
}

/// Unit direction helper for tests and applications.
pub fn unit(v: Vector3<f64>) -> Vector3<f64> {
    v.normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{softplus_inv, GridSpec};
    use crate::SPEED_OF_LIGHT;
    use nalgebra::Matrix4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const W: f64 = 1e-11;

    fn spec(res: usize, n_bins: usize, lo: f64, hi: f64) -> GridSpec {
        GridSpec {
            resolution: [res; 3],
            aabb_min: [lo; 3],
            aabb_max: [hi; 3],
            n_bins,
            channels: 1,
            bin_width_s: W,
            t0_offset_bins: 0.0,
            density_scale: 1.0,
            sh_degree: None,
        }
    }

    /// Opaque slab on vertex planes `z_lo..=z_hi` holding an impulse at `bin`.
    ///
    /// The density jump is steep enough that the front face sits on plane
    /// `z_lo - 1` (see `front_z`), and the impulse also covers that plane so
    /// the first opaque samples carry it.
    fn slab(res: usize, n_bins: usize, z_lo: usize, z_hi: usize, bin: usize) -> TransientFieldGrid {
        let mut g = TransientFieldGrid::constant(spec(res, n_bins, -1.0, 1.0), -60.0, -60.0).unwrap();
        for k in z_lo - 1..=z_hi {
            for j in 0..res {
                for i in 0..res {
                    let v = g.voxel_index(i, j, k);
                    if k >= z_lo {
                        g.density_raw[v] = 1e7;
                    }
                    g.transient_raw[v * n_bins + bin] = softplus_inv(1.0);
                }
            }
        }
        g
    }

    fn front_z(res: usize, z_lo: usize) -> f64 {
        -1.0 + 2.0 * (z_lo - 1) as f64 / (res - 1) as f64
    }

    fn cfg() -> RenderConfig {
        RenderConfig {
            n_samples: 256,
            s_near: 0.0,
            s_far: 20.0,
            jitter: false,
            ..RenderConfig::default()
        }
    }

    fn ray_z(z0: f64) -> Ray {
        Ray::new(Vector3::new(0.013, -0.021, z0), Vector3::z()).unwrap()
    }

    #[test]
    fn empty_grid_renders_zero() {
        let g = TransientFieldGrid::constant(spec(4, 16, -1.0, 1.0), -800.0, 0.0).unwrap();
        let h = render_transient(&g, &ray_z(-3.0), &cfg(), 0).unwrap();
        assert!(h.bins().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn opaque_slab_is_delayed_by_distance() {
        let g = slab(11, 1200, 5, 6, 50);
        let h = render_transient(&g, &ray_z(-3.0), &cfg(), 0).unwrap();
        let s_star = 3.0 + front_z(11, 5);
        let expect = 50.0 + s_star / (SPEED_OF_LIGHT * W);
        assert!((h.argmax() as f64 - expect).abs() <= 1.0, "{} vs {expect}", h.argmax());
        assert!((h.total() - 1.0).abs() < 1e-6);

        let mut no_delay = cfg();
        no_delay.model_propagation_delay = false;
        let h = render_transient(&g, &ray_z(-3.0), &no_delay, 0).unwrap();
        assert_eq!(h.argmax(), 50);
    }

    #[test]
    fn transmittance_profiles() {
        let vac = TransientFieldGrid::constant(spec(3, 4, -10.0, 10.0), -800.0, 0.0).unwrap();
        let ray = ray_z(-5.0);
        let mut c = cfg();
        c.n_samples = 128;
        c.s_far = 2.0;
        let t = render_transmittance(&vac, &ray, &c, 0).unwrap();
        assert!(t.transmittance.iter().all(|v| *v == 1.0));

        // sigma = 1 / m everywhere; softplus(raw) = 1.
        let unit_density = TransientFieldGrid::constant(spec(3, 4, -10.0, 10.0), softplus_inv(1.0), 0.0).unwrap();
        let t = render_transmittance(&unit_density, &ray, &c, 0).unwrap();
        assert_eq!(t.transmittance[0], 1.0);
        assert!(t.transmittance.windows(2).all(|w| w[1] <= w[0]));
        let i = t
            .positions
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 0.693).abs().partial_cmp(&(b.1 - 0.693).abs()).unwrap())
            .unwrap()
            .0;
        let closed_form = (-(t.positions[i] - c.s_near)).exp();
        assert!((t.transmittance[i] - closed_form).abs() / closed_form < 0.01);
        assert!((t.transmittance[i] - 0.5).abs() < 0.01);

        let dense = TransientFieldGrid::constant(spec(3, 4, -10.0, 10.0), 1e4, 0.0).unwrap();
        let t = render_transmittance(&dense, &ray, &c, 0).unwrap();
        assert!(*t.transmittance.last().unwrap() < 1e-12);
    }

    #[test]
    fn depth_of_opaque_surface_and_empty_grid() {
        let g = slab(11, 8, 5, 6, 1);
        let c = cfg();
        let d = render_depth(&g, &ray_z(-3.0), &c, 0).unwrap();
        let spacing = 2.0 / 256.0;
        assert!((d - 3.0 - front_z(11, 5)).abs() <= spacing + 1e-9, "depth {d}");
        let empty = TransientFieldGrid::constant(spec(4, 8, -1.0, 1.0), -800.0, 0.0).unwrap();
        assert_eq!(render_depth(&empty, &ray_z(-3.0), &c, 0).unwrap(), c.s_far);
    }

    #[test]
    fn depth_of_two_half_absorbers() {
        // Two thin layers at s = 1 and s = 3, each absorbing half the light that reaches it.
        // Hand evaluation of the weight series: w1 = 1/2, w2 = 1/4.
        let mut g = TransientFieldGrid::constant(spec(41, 4, -1.0, 3.0), -30.0, 0.0).unwrap();
        let c = RenderConfig {
            n_samples: 400,
            s_near: 0.0,
            s_far: 4.0,
            jitter: false,
            ..RenderConfig::default()
        };
        let ray = Ray::new(Vector3::new(0.0, 0.0, -1.0), Vector3::z()).unwrap();
        // A single lattice plane of density: sample spacing 0.01, lattice spacing 0.1.
        // Every sample within one lattice cell of the plane sees the hat-shaped raw
        // density; choose raw so that the integrated optical depth is ln 2.
        let delta: f64 = 4.0 / 400.0;
        // Evaluate optical depth by summation of the discretised profile.
        let od = |raw: f64, g: &mut TransientFieldGrid| -> f64 {
            for &k in &[10usize, 30] {
                for j in 0..41 {
                    for i in 0..41 {
                        let v = g.voxel_index(i, j, k);
                        g.density_raw[v] = raw;
                    }
                }
            }
            let t = render_transmittance(g, &ray, &c, 0).unwrap();
            // transmittance after the first layer, sampled mid-way between layers
            let mid = t.positions.iter().position(|s| *s > 2.0).unwrap();
            -t.transmittance[mid].ln()
        };
        let (mut lo, mut hi) = (-30.0, 1000.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if od(mid, &mut g) < 2f64.ln() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        od(0.5 * (lo + hi), &mut g);
        let mut trace = RayTrace::default();
        render_traced(&g, &ray, &c, 0, &mut trace).unwrap();
        let w: Vec<f64> = trace.weights().collect();
        let s: Vec<f64> = trace.positions().collect();
        let first: f64 = w.iter().zip(&s).filter(|(_, s)| **s < 2.0).map(|(w, _)| w).sum();
        let second: f64 = w.iter().zip(&s).filter(|(_, s)| **s >= 2.0).map(|(w, _)| w).sum();
        assert!((first - 0.5).abs() < 1e-6 && (second - 0.25).abs() < 1e-6, "{first} {second}");
        let direct: f64 = w.iter().zip(&s).map(|(w, s)| w * s).sum::<f64>() / w.iter().sum::<f64>();
        let depth = render_depth(&g, &ray, &c, 0).unwrap();
        assert!((depth - direct).abs() < 1e-12);
        // (0.5 * 1 + 0.25 * 3) / 0.75 = 5/3, up to the layer thickness.
        assert!((depth - 5.0 / 3.0).abs() < 2.0 * delta + 0.1 * 0.5);
    }

    fn random_grid(rng: &mut ChaCha8Rng, sh: Option<u32>) -> TransientFieldGrid {
        random_grid_w(rng, sh, W)
    }

    fn random_grid_w(rng: &mut ChaCha8Rng, sh: Option<u32>, bin_w: f64) -> TransientFieldGrid {
        let mut s = spec(4, 8, -1.0, 1.0);
        s.bin_width_s = bin_w;
        s.sh_degree = sh;
        s.density_scale = 2.0;
        let nv = s.n_voxels();
        let dens = (0..nv).map(|_| rng.gen_range(-2.0..1.5)).collect();
        let tr = (0..nv * 8).map(|_| rng.gen_range(-3.0..1.0)).collect();
        let shc = sh.map(|l| {
            let k = crate::field::sh_len(l);
            (0..nv * k).map(|i| if i % k == 0 { 3.0 } else { rng.gen_range(-0.5..0.5) }).collect()
        });
        TransientFieldGrid::from_parts(s, dens, tr, shc).unwrap()
    }

    fn random_ray(rng: &mut ChaCha8Rng) -> Ray {
        let o = Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -2.5);
        let t = Vector3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), 0.0);
        Ray::new(o, t - o).unwrap()
    }

    fn probe(g: &TransientFieldGrid, ray: &Ray, c: &RenderConfig, up: &[f64]) -> f64 {
        render_transient(g, ray, c, 7)
            .unwrap()
            .bins()
            .iter()
            .zip(up)
            .map(|(a, b)| a * b)
            .sum()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = RenderConfig {
            n_samples: 24,
            s_near: 0.0,
            s_far: 6.0,
            jitter: true,
            // 2 meters in 1e-11 s bins spans ~670 bins; use coarse timing so the
            // delay stays inside the 8-bin window.
            t0_offset_bins: 0.0,
            white_background: true,
            ..RenderConfig::default()
        };
        for trial in 0..6 {
            let g = random_grid_w(&mut rng, [None, Some(1)][trial % 2], 1e-9);
            let ray = random_ray(&mut rng);
            let up: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut grad = FieldGradient::zeros_like(&g);
            render_transient_gradient(&g, &ray, &c, 7, &up, &mut grad).unwrap();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for &v in grad.touched().to_vec().iter().take(12) {
                for slot in 0..3 {
                    let mut gp = g.clone();
                    let mut gm = g.clone();
                    let an = match slot {
                        0 => {
                            gp.density_raw[v] += h;
                            gm.density_raw[v] -= h;
                            grad.density[v]
                        }
                        _ => {
                            let n = v * 8 + slot * 3;
                            gp.transient_raw[n] += h;
                            gm.transient_raw[n] -= h;
                            grad.transient[n]
                        }
                    };
                    let fd = (probe(&gp, &ray, &c, &up) - probe(&gm, &ray, &c, &up)) / (2.0 * h);
                    worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
                }
            }
            assert!(worst <= 1e-4, "trial {trial}: rel err {worst}");
        }
    }

    #[test]
    fn zero_upstream_and_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let g = random_grid(&mut rng, None);
        let ray = random_ray(&mut rng);
        let c = RenderConfig {
            n_samples: 16,
            ..cfg()
        };
        let mut grad = FieldGradient::zeros_like(&g);
        render_transient_gradient(&g, &ray, &c, 1, &[0.0; 8], &mut grad).unwrap();
        assert!(grad.is_zero());

        // A ray that only crosses the x < 0 half never touches vertices with i = 3.
        let side = Ray::new(Vector3::new(-0.8, -0.8, -3.0), Vector3::z()).unwrap();
        render_transient_gradient(&g, &side, &c, 1, &[1.0; 8], &mut grad).unwrap();
        for k in 0..4 {
            for j in 0..4 {
                let v = g.voxel_index(3, j, k);
                assert_eq!(grad.density[v], 0.0);
                assert!(grad.transient[v * 8..v * 8 + 8].iter().all(|x| *x == 0.0));
            }
        }
    }

    #[test]
    fn backward_rejects_foreign_trace() {
        let g = TransientFieldGrid::new(spec(3, 4, -1.0, 1.0)).unwrap();
        let c = cfg();
        let mut trace = RayTrace::default();
        let ray = ray_z(-2.0);
        render_traced(&g, &ray, &c, 3, &mut trace).unwrap();
        let mut grad = FieldGradient::zeros_like(&g);
        let r = backward(&g, &mut trace, &ray, &c, 4, &[1.0; 4], &mut grad);
        assert!(matches!(r, Err(Error::Inconsistent(_))));
        let r = backward(&g, &mut trace, &ray_z(-1.0), &c, 3, &[1.0; 4], &mut grad);
        assert!(matches!(r, Err(Error::Inconsistent(_))));
    }

    #[test]
    fn weights_bounded_and_outputs_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let g = random_grid(&mut rng, Some(2));
            let ray = random_ray(&mut rng);
            let mut trace = RayTrace::default();
            render_traced(&g, &ray, &cfg(), 5, &mut trace).unwrap();
            let total: f64 = trace.weights().sum();
            assert!(total <= 1.0 + 1e-12);
            assert!(trace.output().iter().all(|v| *v >= 0.0));
        }
    }

    fn slab_camera(z: f64, size: u32) -> CameraModel {
        let mut pose = Matrix4::identity();
        pose[(2, 3)] = z;
        CameraModel::new(
            4.0 * size as f64,
            4.0 * size as f64,
            size as f64 / 2.0,
            size as f64 / 2.0,
            size,
            size,
            pose,
        )
        .unwrap()
    }

    #[test]
    fn static_video_delays_follow_per_ray_distance() {
        // Camera at z = -3; the ray through pixel (i, j) reaches the face after
        // (3 + z_front) / cos(theta).
        let g = slab(11, 1400, 5, 6, 40);
        let cam = slab_camera(-3.0, 2);
        let c = RenderConfig {
            n_samples: 400,
            ..cfg()
        };
        let video = render_video_static(&g, &cam, &c).unwrap();
        for j in 0..2 {
            for i in 0..2 {
                let ray = cam.pixel_center_ray(i, j).unwrap();
                let s = (3.0 + front_z(11, 5)) / ray.direction.z;
                let expect = 40.0 + s / (SPEED_OF_LIGHT * W);
                let got = video.histogram(j as usize, i as usize, 0).argmax() as f64;
                assert!((got - expect).abs() <= 1.0, "pixel ({i},{j}): {got} vs {expect}");
            }
        }
    }

    #[test]
    fn doubling_resolution_keeps_coincident_rays() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let g = random_grid(&mut rng, None);
        let cam = slab_camera(-2.5, 3);
        let c = RenderConfig {
            jitter: false,
            ..cfg()
        };
        let a = render_video_static(&g, &cam, &c).unwrap();
        let big = cam.scaled(2).unwrap();
        // Pixel (i, j) of the small camera has center (i + 0.5); in the doubled camera the
        // same ray passes through (2i + 1, 2j + 1) exactly.
        for j in 0..3u32 {
            for i in 0..3u32 {
                let ra = cam.pixel_center_ray(i, j).unwrap();
                let rb = big.pixel_to_ray(2.0 * i as f64 + 1.0, 2.0 * j as f64 + 1.0).unwrap();
                assert!((ra.direction - rb.direction).norm() < 1e-15);
                let hb = render_transient(&g, &rb, &c, 0).unwrap();
                let ha = a.histogram(j as usize, i as usize, 0);
                let diff = ha.bins().iter().zip(hb.bins()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-12);
            }
        }
    }

    #[test]
    fn dynamic_matches_static_for_constant_trajectory() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let g = random_grid(&mut rng, None);
        let cam = slab_camera(-2.5, 3);
        let c = cfg();
        let video = render_video_static(&g, &cam, &c).unwrap();
        let traj = vec![cam.clone(); 8];
        let frames = render_video_dynamic(&g, &traj, &c).unwrap();
        for n in 0..8 {
            assert_eq!(frames.frames[n], video.slice(n, Some(0)));
        }
        assert!(matches!(
            render_video_dynamic(&g, &traj[..5], &c),
            Err(Error::Config(_))
        ));
        let empty = TransientFieldGrid::constant(spec(4, 8, -1.0, 1.0), -800.0, 0.0).unwrap();
        let frames = render_video_dynamic(&empty, &traj, &c).unwrap();
        assert_eq!(frames.max_value(), 0.0);
    }

    #[test]
    fn receding_camera_shifts_impulse_frame() {
        // Camera recedes by `step` per frame; the impulse visible at bin n under pose n
        // appears at n = b + (s0 + n * step) / (cW)  =>  n = (b + s0/cW) / (1 - step/cW).
        let n_bins = 1600;
        let g = slab(11, n_bins, 5, 6, 40);
        let cw = SPEED_OF_LIGHT * W;
        let step = 0.25 * cw;
        let traj: Vec<CameraModel> = (0..n_bins).map(|n| slab_camera(-3.0 - step * n as f64, 1)).collect();
        let c = RenderConfig {
            n_samples: 300,
            ..cfg()
        };
        let frames = render_video_dynamic(&g, &traj, &c).unwrap();
        let peak = (0..n_bins)
            .max_by(|a, b| frames.frames[*a][0].partial_cmp(&frames.frames[*b][0]).unwrap())
            .unwrap();
        let s0 = 3.0 + front_z(11, 5);
        let expect = (40.0 + s0 / cw) / (1.0 - step / cw);
        assert!((peak as f64 - expect).abs() <= 2.0, "{peak} vs {expect}");
        // A static camera would see it at 40 + s0 / cW.
        assert!((peak as f64 - (40.0 + s0 / cw)).abs() > 100.0);
    }
}
