//! Time-binned transients and the fractional delay operator.
//!
//! Bin `n` of a histogram is the sample of the signal at time
//! `(n + t0_offset_bins) * bin_width_s` after pulse emission; it collects
//! photons arriving within half a bin of that time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientHistogram {
    bins: Vec<f64>,
    bin_width_s: f64,
    t0_offset_bins: f64,
}

impl TransientHistogram {
    pub fn new(bins: Vec<f64>, bin_width_s: f64, t0_offset_bins: f64) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::InvalidInput("histogram needs at least one bin".into()));
        }
        if !(bin_width_s > 0.0 && bin_width_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bin width must be positive, got {bin_width_s}"
            )));
        }
        if !t0_offset_bins.is_finite() {
            return Err(Error::InvalidInput("time origin must be finite".into()));
        }
        if let Some((n, v)) = bins.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "bin {n} holds {v}; bins must be finite and non-negative"
            )));
        }
        Ok(Self {
            bins,
            bin_width_s,
            t0_offset_bins,
        })
    }

    pub fn zeros(n_bins: usize, bin_width_s: f64, t0_offset_bins: f64) -> Result<Self> {
        Self::new(vec![0.0; n_bins], bin_width_s, t0_offset_bins)
    }

    /// Builds a histogram from values that may carry tiny negative round-off,
    /// clamping them to zero.
    pub(crate) fn from_clamped(mut bins: Vec<f64>, bin_width_s: f64, t0_offset_bins: f64) -> Self {
        for v in &mut bins {
            if !(*v > 0.0) {
                *v = 0.0;
            }
        }
        debug_assert!(!bins.is_empty() && bin_width_s > 0.0);
        Self {
            bins,
            bin_width_s,
            t0_offset_bins,
        }
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn into_bins(self) -> Vec<f64> {
        self.bins
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_s
    }

    pub fn t0_offset_bins(&self) -> f64 {
        self.t0_offset_bins
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Index of the largest bin (first one on ties).
    pub fn argmax(&self) -> usize {
        argmax(&self.bins)
    }

    /// Returns a copy delayed by `delta_bins` (mass moves to later bins).
    pub fn shifted(&self, delta_bins: f64) -> Self {
        shift_histogram(self, delta_bins)
    }
}

/// Delays `h` by `delta_bins` with linear interpolation between neighbouring
/// bins. Mass leaving either end of the window is dropped.
pub fn shift_histogram(h: &TransientHistogram, delta_bins: f64) -> TransientHistogram {
    let mut out = vec![0.0; h.n_bins()];
    shift_add(&h.bins, delta_bins, 1.0, &mut out);
    TransientHistogram::from_clamped(out, h.bin_width_s, h.t0_offset_bins)
}

/// Integer and fractional parts of a delay: `delta = k + f`, `0 <= f < 1`.
#[inline]
pub(crate) fn split_delay(delta: f64) -> (i64, f64) {
    let k = delta.floor();
    let f = delta - k;
    // Delays this large push everything out of any realistic window.
    let k = k.clamp(-(1i64 << 40) as f64, (1i64 << 40) as f64) as i64;
    if f >= 1.0 {
        (k + 1, 0.0)
    } else {
        (k, f)
    }
}

/// `dst[n] += weight * ((1 - f) * src[n - k] + f * src[n - k - 1])`, reading
/// zero outside `src`.
pub fn shift_add(src: &[f64], delta: f64, weight: f64, dst: &mut [f64]) {
    let (k, f) = split_delay(delta);
    let n_src = src.len() as i64;
    let n_dst = dst.len() as i64;
    let a = weight * (1.0 - f);
    let b = weight * f;
    // Output bins `n` that read a valid `src[n - k]` or `src[n - k - 1]`.
    let lo = k.max(0);
    let hi = (n_src + k + 1).min(n_dst);
    for n in lo..hi {
        let m = n - k;
        let mut v = 0.0;
        if m < n_src {
            v += a * src[m as usize];
        }
        if m >= 1 {
            v += b * src[(m - 1) as usize];
        }
        dst[n as usize] += v;
    }
}

/// Adjoint of [`shift_add`] with unit weight:
/// `out[m] = (1 - f) * g[m + k] + f * g[m + k + 1]`.
pub fn shift_adjoint(g: &[f64], delta: f64, out: &mut [f64]) {
    let (k, f) = split_delay(delta);
    let n_g = g.len() as i64;
    for (m, o) in out.iter_mut().enumerate() {
        let n = m as i64 + k;
        let mut v = 0.0;
        if (0..n_g).contains(&n) {
            v += (1.0 - f) * g[n as usize];
        }
        if (0..n_g).contains(&(n + 1)) {
            v += f * g[(n + 1) as usize];
        }
        *o = v;
    }
}

/// Linear interpolation of a sampled signal at fractional index `x`; zero
/// outside the window.
pub fn sample_linear(values: &[f64], x: f64) -> f64 {
    let (k, f) = split_delay(x);
    let at = |i: i64| -> f64 {
        if i >= 0 && (i as usize) < values.len() {
            values[i as usize]
        } else {
            0.0
        }
    };
    if f == 0.0 {
        at(k)
    } else {
        (1.0 - f) * at(k) + f * at(k + 1)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
