//! Direct/global separation by per-pixel Gaussian mixture fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::TransientVideo;

pub const FWHM_TO_STD: f64 = 2.355;
pub const MAX_COMPONENTS: usize = 4;
pub const MAX_EM_ITERS: usize = 200;
const MIN_STD: f64 = 0.3;
const EM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl GmmComponent {
    /// Expected mass in bin `n` (density evaluated at the bin center).
    pub fn eval(&self, n: f64) -> f64 {
        let z = (n - self.mean) / self.std;
        self.weight * (-0.5 * z * z).exp() / (self.std * (2.0 * std::f64::consts::PI).sqrt())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    /// Sorted by mean.
    pub components: Vec<GmmComponent>,
    pub noise_floor: f64,
    pub converged: bool,
}

/// Median of the bins before the first one exceeding 10% of the maximum.
pub fn noise_floor(y: &[f64]) -> f64 {
    let peak = y.iter().copied().fold(0.0, f64::max);
    let rise = y.iter().position(|v| *v > 0.1 * peak).unwrap_or(0);
    if rise == 0 {
        return 0.0;
    }
    let mut head = y[..rise].to_vec();
    head.sort_by(f64::total_cmp);
    let m = head.len() / 2;
    if head.len() % 2 == 1 {
        head[m]
    } else {
        0.5 * (head[m - 1] + head[m])
    }
}

fn box3(y: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(y.len());
            y[lo..hi].iter().sum::<f64>() / 3.0
        })
        .collect()
}

/// Local maxima of the 3-bin smoothed histogram, largest first.
pub fn smoothed_peaks(y: &[f64]) -> Vec<usize> {
    let s = box3(y);
    let peak = s.iter().copied().fold(0.0, f64::max);
    let mut out: Vec<usize> = (0..s.len())
        .filter(|&i| {
            let l = if i > 0 { s[i - 1] } else { f64::NEG_INFINITY };
            let r = if i + 1 < s.len() { s[i + 1] } else { f64::NEG_INFINITY };
            s[i] > 1e-3 * peak && s[i] > l && s[i] >= r
        })
        .collect();
    out.sort_by(|a, b| s[*b].total_cmp(&s[*a]).then(a.cmp(b)));
    out
}

fn log_likelihood(y: &[f64], comps: &[GmmComponent]) -> f64 {
    y.iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(n, v)| {
            let p: f64 = comps.iter().map(|c| c.eval(n as f64)).sum();
            v * p.max(1e-300).ln()
        })
        .sum()
}

/// Weighted EM on bin indices. Weights of the result sum to one.
fn em(y: &[f64], init: &[usize], spread: f64) -> (Vec<GmmComponent>, bool) {
    let mut comps: Vec<GmmComponent> = init
        .iter()
        .map(|&m| GmmComponent {
            weight: 1.0 / init.len() as f64,
            mean: m as f64,
            std: spread.max(MIN_STD),
        })
        .collect();
    let mut prev = f64::NEG_INFINITY;
    let mut resp = Vec::new();
    for _ in 0..MAX_EM_ITERS {
        let k = comps.len();
        resp.resize(k, 0.0);
        let mut w = vec![0.0; k];
        let mut s1 = vec![0.0; k];
        let mut s2 = vec![0.0; k];
        for (n, &v) in y.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            let x = n as f64;
            let mut tot = 0.0;
            for (r, c) in resp.iter_mut().zip(&comps) {
                *r = c.eval(x);
                tot += *r;
            }
            if tot <= 0.0 {
                // Far outside all components: hand the bin to the nearest one.
                let j = (0..k)
                    .min_by(|a, b| (comps[*a].mean - x).abs().total_cmp(&(comps[*b].mean - x).abs()))
                    .unwrap_or(0);
                resp.iter_mut().for_each(|r| *r = 0.0);
                resp[j] = 1.0;
                tot = 1.0;
            }
            for j in 0..k {
                let r = v * resp[j] / tot;
                w[j] += r;
                s1[j] += r * x;
                s2[j] += r * x * x;
            }
        }
        let total: f64 = w.iter().sum();
        for j in 0..k {
            if w[j] <= 0.0 {
                comps[j].weight = 0.0;
                continue;
            }
            let mean = s1[j] / w[j];
            let var = (s2[j] / w[j] - mean * mean).max(0.0);
            comps[j] = GmmComponent {
                weight: w[j] / total,
                mean,
                std: var.sqrt().max(MIN_STD),
            };
        }
        comps.retain(|c| c.weight > 0.0);
        let ll = log_likelihood(y, &comps);
        if (ll - prev).abs() <= EM_TOL * ll.abs().max(1.0) {
            return (comps, true);
        }
        prev = ll;
    }
    (comps, false)
}

/// Fits up to four Gaussians to one floor-subtracted histogram, choosing K by BIC
/// among the fits whose EM converged.
pub fn fit_gmm(y: &[f64], pulse_std: f64) -> GmmFit {
    let floor = noise_floor(y);
    let clean: Vec<f64> = y.iter().map(|v| (v - floor).max(0.0)).collect();
    let mass: f64 = clean.iter().sum();
    if !(mass > 0.0) {
        return GmmFit {
            components: Vec::new(),
            noise_floor: floor,
            converged: true,
        };
    }
    let peaks = smoothed_peaks(&clean);
    let k_max = peaks.len().clamp(1, MAX_COMPONENTS);
    let fallback = [clean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)];
    let mut best: Option<(f64, Vec<GmmComponent>, bool)> = None;
    for k in 1..=k_max {
        let init = if peaks.is_empty() { &fallback[..] } else { &peaks[..k] };
        let (comps, converged) = em(&clean, init, pulse_std);
        let ll = log_likelihood(&clean, &comps);
        let p = (3 * comps.len() - 1) as f64;
        let bic = p * mass.max(1.0).ln() - 2.0 * ll;
        let better = match &best {
            None => true,
            Some(b) => (converged, -bic) > (b.2, -b.0),
        };
        if better {
            best = Some((bic, comps, converged));
        }
    }
    let (_, mut comps, converged) = best.expect("at least one candidate");
    for c in &mut comps {
        c.weight *= mass;
    }
    comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    GmmFit {
        components: comps,
        noise_floor: floor,
        converged,
    }
}

/// Splits one histogram into direct and global parts.
///
/// The earliest component counts as direct when its width matches the pulse.
/// Direct is clamped to the floor-subtracted input so both parts stay nonnegative
/// and sum to it exactly.
pub fn separate_histogram(y: &[f64], pulse_fwhm_bins: f64) -> (Vec<f64>, Vec<f64>, GmmFit) {
    let pulse_std = pulse_fwhm_bins / FWHM_TO_STD;
    let fit = fit_gmm(y, pulse_std);
    let clean: Vec<f64> = y.iter().map(|v| (v - fit.noise_floor).max(0.0)).collect();
    let mut direct = vec![0.0; y.len()];
    let first = fit.components.first().copied();
    if let Some(c) = first.filter(|c| fit.converged && c.std <= 1.5 * pulse_std) {
        for (n, d) in direct.iter_mut().enumerate() {
            *d = c.eval(n as f64).min(clean[n]);
        }
    }
    let global = clean.iter().zip(&direct).map(|(y, d)| (y - d).max(0.0)).collect();
    (direct, global, fit)
}

#[derive(Clone, Debug)]
pub struct Separation {
    pub direct: TransientVideo,
    pub global: TransientVideo,
    /// Indices `pixel * channels + channel` whose EM did not converge.
    pub flagged: Vec<usize>,
}

pub fn separate_direct_global(video: &TransientVideo, pulse_fwhm_bins: f64) -> Result<Separation> {
    if !(pulse_fwhm_bins > 0.0 && pulse_fwhm_bins.is_finite()) {
        return Err(Error::Config(format!("pulse FWHM must be positive, got {pulse_fwhm_bins}")));
    }
    if video.data().iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidInput("separation needs a nonnegative video".into()));
    }
    let nb = video.n_bins();
    let results: Vec<(Vec<f64>, Vec<f64>, bool)> = video
        .data()
        .par_chunks(nb)
        .map(|h| {
            let (d, g, fit) = separate_histogram(h, pulse_fwhm_bins);
            (d, g, fit.converged)
        })
        .collect();
    let mut direct = video.map_values(|_| 0.0);
    let mut global = direct.clone();
    let mut flagged = Vec::new();
    let l = video.pixel_len();
    let ch = video.channels();
    for (i, (d, g, ok)) in results.into_iter().enumerate() {
        let (p, c) = (i / ch, i % ch);
        direct.pixel_mut(p)[c * nb..(c + 1) * nb].copy_from_slice(&d);
        global.pixel_mut(p)[c * nb..(c + 1) * nb].copy_from_slice(&g);
        if !ok {
            flagged.push(i);
        }
        debug_assert_eq!(l, ch * nb);
    }
    Ok(Separation { direct, global, flagged })
}
