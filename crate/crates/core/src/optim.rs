//! Gamma-compressed L2 training of a transient field with Adam.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::field::{FieldGradient, TransientFieldGrid};
use crate::render::{backward, render_traced, RayTrace, RenderConfig};
use crate::rng;
use crate::video::TransientVideo;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Exponent of the compression `g(x) = x^(1/gamma)`.
    pub gamma: f64,
    pub lr: f64,
    /// Multiplier on `lr` for the density block.
    pub density_lr_scale: f64,
    pub total_iters: usize,
    pub anneal_milestones: Vec<f64>,
    pub anneal_factor: f64,
    pub batch_rays: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Fixed number of gradient partitions, reduced in order each iteration.
    pub grad_shards: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Weight of the total-variation penalty on raw density (0 disables it).
    pub tv_density: f64,
    /// Weight of the total-variation penalty on raw transients (0 disables it).
    pub tv_transient: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 5.0,
            lr: 1e-2,
            density_lr_scale: 1.0,
            total_iters: 30_000,
            anneal_milestones: vec![0.5, 0.75, 0.9],
            anneal_factor: 0.33,
            batch_rays: 1024,
            seed: 0,
            log_every: 100,
            grad_shards: 4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            tv_density: 0.0,
            tv_transient: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return bad("gamma must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.density_lr_scale > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.total_iters == 0 || self.batch_rays == 0 || self.log_every == 0 || self.grad_shards == 0 {
            return bad("total_iters, batch_rays, log_every and grad_shards must be positive");
        }
        let m = &self.anneal_milestones;
        if m.iter().any(|x| !(*x > 0.0 && *x < 1.0)) || m.windows(2).any(|w| w[0] >= w[1]) {
            return bad("milestones must be strictly increasing in (0, 1)");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor <= 1.0) {
            return bad("anneal_factor must lie in (0, 1]");
        }
        if !(self.tv_density >= 0.0 && self.tv_density.is_finite() && self.tv_transient >= 0.0 && self.tv_transient.is_finite()) {
            return bad("tv weights must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("need 0 <= beta < 1 and eps > 0");
        }
        Ok(())
    }

    /// Iterations (1-based) after which the learning rate drops.
    pub fn milestone_iters(&self) -> Vec<usize> {
        self.anneal_milestones
            .iter()
            .map(|m| (m * self.total_iters as f64).round() as usize)
            .collect()
    }

    /// Learning rate used by iteration `iter` (1-based).
    pub fn lr_at(&self, iter: usize) -> f64 {
        let drops = self.milestone_iters().iter().filter(|m| iter > **m).count();
        self.lr * self.anneal_factor.powi(drops as i32)
    }

    pub fn is_milestone(&self, iter: usize) -> bool {
        self.milestone_iters().contains(&iter)
    }
}

#[inline]
pub fn compress(x: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        x
    } else {
        x.powf(1.0 / gamma)
    }
}

#[inline]
pub fn decompress(x: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        x
    } else {
        x.max(0.0).powf(gamma)
    }
}

/// Loss of one ray against its measurement, writing `dL/d rendered` into `grad`.
pub fn loss(rendered: &[f64], measured: &[f64], gamma: f64, grad: &mut [f64]) -> Result<f64> {
    if rendered.len() != measured.len() || grad.len() != rendered.len() {
        return Err(Error::shape("loss operands", measured.len(), rendered.len()));
    }
    if measured.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidData("measured values must be non-negative".into()));
    }
    let mut l = 0.0;
    for ((g, r), m) in grad.iter_mut().zip(rendered).zip(measured) {
        let d = compress(*m, gamma) - r;
        l += d * d;
        *g = -2.0 * d;
    }
    Ok(l)
}

/// Mean squared difference between lattice neighbours of a per-vertex block
/// with `width` values per vertex (x-fastest layout).
pub fn total_variation(values: &[f64], resolution: [usize; 3], width: usize) -> f64 {
    let [gx, gy, gz] = resolution;
    let strides = [width, gx * width, gx * gy * width];
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (a, &st) in strides.iter().enumerate() {
        let n = resolution[a];
        if n < 2 {
            continue;
        }
        for k in 0..gz {
            for j in 0..gy {
                for i in 0..gx {
                    if [i, j, k][a] + 1 < n {
                        let base = (i + gx * (j + gy * k)) * width;
                        for c in 0..width {
                            let d = values[base + c] - values[base + st + c];
                            sum += d * d;
                        }
                        pairs += 1;
                    }
                }
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / (pairs * width) as f64
    }
}

fn tv_pairs(resolution: [usize; 3]) -> usize {
    let [gx, gy, gz] = resolution;
    (gx - 1) * gy * gz + gx * (gy - 1) * gz + gx * gy * (gz - 1)
}

/// Adds `scale * d total_variation / d values` into `out`.
pub fn add_total_variation_gradient(values: &[f64], resolution: [usize; 3], width: usize, scale: f64, out: &mut [f64]) {
    let [gx, gy, _] = resolution;
    let pairs = tv_pairs(resolution);
    if pairs == 0 || scale == 0.0 {
        return;
    }
    let c = 2.0 * scale / (pairs * width) as f64;
    let slab = gx * gy * width;
    out.par_chunks_mut(slab).enumerate().for_each(|(k, chunk)| {
        for j in 0..gy {
            for i in 0..gx {
                let local = (i + gx * j) * width;
                let v = k * slab + local;
                let mut add = |nb: usize| {
                    for ch in 0..width {
                        chunk[local + ch] += c * (values[v + ch] - values[nb + ch]);
                    }
                };
                if i > 0 {
                    add(v - width);
                }
                if i + 1 < gx {
                    add(v + width);
                }
                if j > 0 {
                    add(v - gx * width);
                }
                if j + 1 < gy {
                    add(v + gx * width);
                }
                if k > 0 {
                    add(v - slab);
                }
                if (k + 1) * slab < values.len() {
                    add(v + slab);
                }
            }
        }
    });
}

/// Same as [`loss`] with the target already compressed.
#[inline]
fn loss_compressed(rendered: &[f64], target: &[f64], grad: &mut [f64]) -> f64 {
    let mut l = 0.0;
    for ((g, r), t) in grad.iter_mut().zip(rendered).zip(target) {
        let d = t - r;
        l += d * d;
        *g = -2.0 * d;
    }
    l
}

/// Bias-corrected Adam moments for a list of parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Parameter block names of a grid, in storage order.
pub const GRID_BLOCKS: [&str; 3] = ["density", "transient", "sh"];

impl AdamState {
    pub fn new(block_sizes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: block_sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: block_sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_grid(grid: &TransientFieldGrid, cfg: &TrainConfig) -> Self {
        Self::new(&grid_block_sizes(grid), cfg.beta1, cfg.beta2, cfg.eps)
    }

    pub fn validate_for(&self, sizes: &[usize]) -> Result<()> {
        let ok = self.m.len() == sizes.len()
            && self.v.len() == sizes.len()
            && self.m.iter().zip(sizes).all(|(b, n)| b.len() == *n)
            && self.v.iter().zip(sizes).all(|(b, n)| b.len() == *n);
        if !ok {
            return Err(Error::Inconsistent("optimizer state does not match the parameters".into()));
        }
        if self.m.iter().chain(&self.v).flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData("optimizer state holds non-finite values".into()));
        }
        Ok(())
    }

    /// One Adam update over all blocks; `lrs[b]` is the learning rate of block `b`.
    ///
    /// Gradients are checked before anything is written, so a non-finite
    /// gradient leaves parameters and state untouched.
    pub fn adam_step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        lrs: &[f64],
        names: &[&'static str],
        iteration: usize,
    ) -> Result<()> {
        let nb = self.m.len();
        if params.len() != nb || grads.len() != nb || lrs.len() != nb {
            return Err(Error::shape("adam blocks", nb, params.len()));
        }
        for b in 0..nb {
            if params[b].len() != self.m[b].len() || grads[b].len() != self.m[b].len() {
                return Err(Error::shape("adam block", self.m[b].len(), grads[b].len()));
            }
            if grads[b].iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    iteration,
                    block: names.get(b).copied().unwrap_or("params"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 / (1.0 - b1.powi(t));
        let c2 = 1.0 / (1.0 - b2.powi(t));
        for b in 0..nb {
            let lr = lrs[b];
            let (m, v) = (&mut self.m[b], &mut self.v[b]);
            for (((p, g), m), v) in params[b].iter_mut().zip(grads[b]).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Adam update of a grid from an accumulated gradient.
    pub fn step_grid(
        &mut self,
        grid: &mut TransientFieldGrid,
        grad: &FieldGradient,
        lr: f64,
        density_lr_scale: f64,
        iteration: usize,
    ) -> Result<()> {
        let lrs = [lr * density_lr_scale, lr, lr];
        let nb = self.m.len();
        let TransientFieldGrid {
            density_raw,
            transient_raw,
            sh_coeffs,
            ..
        } = grid;
        let mut params: Vec<&mut [f64]> = vec![density_raw, transient_raw];
        let mut grads: Vec<&[f64]> = vec![grad.density(), grad.transient()];
        if let (Some(p), Some(g)) = (sh_coeffs.as_mut(), grad.sh()) {
            params.push(p);
            grads.push(g);
        }
        self.adam_step(&mut params, &grads, &lrs[..nb], &GRID_BLOCKS[..nb], iteration)
    }
}

pub fn grid_block_sizes(grid: &TransientFieldGrid) -> Vec<usize> {
    let mut sizes = vec![grid.density_raw().len(), grid.transient_raw().len()];
    if let Some(sh) = grid.sh_coeffs() {
        sizes.push(sh.len());
    }
    sizes
}

/// A training viewpoint: camera plus its (normalized) measured video.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: CameraModel,
    pub video: TransientVideo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    /// Batch data loss (no penalties) divided by the number of histogram values in the batch.
    pub loss: f64,
    pub lr: f64,
}

struct Shard {
    grad: FieldGradient,
    trace: RayTrace,
    upstream: Vec<f64>,
}

/// Resumable training loop.
pub struct Trainer<'a> {
    views: &'a [TrainView],
    targets: Vec<Vec<f64>>,
    pub cfg: TrainConfig,
    pub render: RenderConfig,
    pub grid: TransientFieldGrid,
    pub adam: AdamState,
    /// Completed iterations.
    pub iter: usize,
    pub log: Vec<LossRecord>,
    shards: Vec<Shard>,
}

fn check_views(views: &[TrainView], grid: &TransientFieldGrid) -> Result<()> {
    let first = views
        .first()
        .ok_or_else(|| Error::Config("training needs at least one viewpoint".into()))?;
    for v in views {
        let vid = &v.video;
        if vid.n_bins() != first.video.n_bins() || vid.bin_width_s() != first.video.bin_width_s() {
            return Err(Error::Config("all videos must share N and bin width".into()));
        }
        if vid.height() != v.camera.height as usize || vid.width() != v.camera.width as usize {
            return Err(Error::Config("video size does not match its camera".into()));
        }
        if vid.n_bins() != grid.n_bins() || vid.channels() != grid.channels() {
            return Err(Error::Config(format!(
                "videos have {} channels x {} bins, grid has {} x {}",
                vid.channels(),
                vid.n_bins(),
                grid.channels(),
                grid.n_bins()
            )));
        }
        if (vid.bin_width_s() - grid.bin_width_s()).abs() > 1e-9 * grid.bin_width_s() {
            return Err(Error::Config("video and grid bin widths differ".into()));
        }
        v.camera.validate()?;
    }
    Ok(())
}

impl<'a> Trainer<'a> {
    pub fn new(
        views: &'a [TrainView],
        grid: TransientFieldGrid,
        cfg: TrainConfig,
        render: RenderConfig,
    ) -> Result<Self> {
        let adam = AdamState::for_grid(&grid, &cfg);
        Self::resume(views, grid, adam, 0, Vec::new(), cfg, render)
    }

    pub fn resume(
        views: &'a [TrainView],
        grid: TransientFieldGrid,
        adam: AdamState,
        iter: usize,
        log: Vec<LossRecord>,
        cfg: TrainConfig,
        render: RenderConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        render.validate()?;
        check_views(views, &grid)?;
        adam.validate_for(&grid_block_sizes(&grid))?;
        if adam.step != iter as u64 || iter > cfg.total_iters {
            return Err(Error::Inconsistent(format!(
                "optimizer has taken {} steps but {iter} iterations are recorded",
                adam.step
            )));
        }
        let targets = views
            .iter()
            .map(|v| v.video.data().iter().map(|x| compress(*x, cfg.gamma)).collect())
            .collect();
        let shards = (0..cfg.grad_shards)
            .map(|_| Shard {
                grad: FieldGradient::zeros_like(&grid),
                trace: RayTrace::default(),
                upstream: vec![0.0; grid.pixel_len()],
            })
            .collect();
        Ok(Self {
            views,
            targets,
            cfg,
            render,
            grid,
            adam,
            iter,
            log,
            shards,
        })
    }

    pub fn is_done(&self) -> bool {
        self.iter >= self.cfg.total_iters
    }

    /// Runs one iteration; returns the log record when this iteration is logged.
    pub fn step(&mut self) -> Result<Option<LossRecord>> {
        let it = self.iter + 1;
        let lr = self.cfg.lr_at(it);
        let mut picker = rng::stream(&[self.cfg.seed, it as u64, 0x5eed]);
        let batch: Vec<(usize, usize)> = (0..self.cfg.batch_rays)
            .map(|_| {
                let v = picker.gen_range(0..self.views.len());
                (v, picker.gen_range(0..self.views[v].camera.n_pixels()))
            })
            .collect();
        let per_shard = batch.len().div_ceil(self.shards.len());
        let (grid, views, targets, render) = (&self.grid, self.views, &self.targets, &self.render);
        let seed = self.cfg.seed;
        let l = grid.pixel_len();
        let losses: Vec<f64> = self
            .shards
            .par_iter_mut()
            .enumerate()
            .map(|(si, shard)| -> Result<f64> {
                let lo = (si * per_shard).min(batch.len());
                let hi = ((si + 1) * per_shard).min(batch.len());
                let mut total = 0.0;
                for (k, &(v, px)) in batch[lo..hi].iter().enumerate() {
                    let cam = &views[v].camera;
                    let w = cam.width as usize;
                    let ray = cam.pixel_center_ray((px % w) as u32, (px / w) as u32)?;
                    let ray_seed = rng::derive_seed(&[seed, it as u64, (lo + k) as u64]);
                    render_traced(grid, &ray, render, ray_seed, &mut shard.trace)?;
                    let target = &targets[v][px * l..(px + 1) * l];
                    total += loss_compressed(shard.trace.output(), target, &mut shard.upstream);
                    backward(grid, &mut shard.trace, &ray, render, ray_seed, &shard.upstream, &mut shard.grad)?;
                }
                Ok(total)
            })
            .collect::<Result<_>>()?;
        let (head, tail) = self.shards.split_at_mut(1);
        for s in tail.iter_mut() {
            head[0].grad.merge(&s.grad);
            s.grad.clear();
        }
        if self.cfg.tv_density > 0.0 || self.cfg.tv_transient > 0.0 {
            // The data gradient is a sum over the batch; scale the mean penalty to match.
            let scale = (batch.len() * l) as f64;
            let res = self.grid.spec().resolution;
            let g = &mut head[0].grad;
            g.touch_all();
            add_total_variation_gradient(self.grid.density_raw(), res, 1, scale * self.cfg.tv_density, &mut g.density);
            add_total_variation_gradient(self.grid.transient_raw(), res, l, scale * self.cfg.tv_transient, &mut g.transient);
        }
        let loss_sum: f64 = losses.iter().sum();
        if !loss_sum.is_finite() {
            return Err(Error::NonFinite {
                iteration: it,
                block: "loss",
            });
        }
        self.adam
            .step_grid(&mut self.grid, &head[0].grad, lr, self.cfg.density_lr_scale, it)?;
        head[0].grad.clear();
        self.iter = it;
        let record = LossRecord {
            iter: it,
            loss: loss_sum / (batch.len() * l) as f64,
            lr,
        };
        if it == 1 || it % self.cfg.log_every == 0 || it == self.cfg.total_iters {
            self.log.push(record);
            return Ok(Some(record));
        }
        Ok(None)
    }

    /// Runs to completion, calling `checkpoint` after each milestone and the last iteration.
    pub fn run(&mut self, mut checkpoint: impl FnMut(&Trainer<'a>) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            if let Some(r) = self.step()? {
                log::info!("iter {} loss {:.6e} lr {:.3e}", r.iter, r.loss, r.lr);
            }
            if self.cfg.is_milestone(self.iter) || self.is_done() {
                checkpoint(self)?;
            }
        }
        Ok(())
    }
}

/// Trains `grid` on `views` and returns it with the loss log.
pub fn train(
    views: &[TrainView],
    grid: TransientFieldGrid,
    cfg: &TrainConfig,
    render: &RenderConfig,
) -> Result<(TransientFieldGrid, Vec<LossRecord>)> {
    let mut t = Trainer::new(views, grid, cfg.clone(), render.clone())?;
    t.run(|_| Ok(()))?;
    Ok((t.grid, t.log))
}
