use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::histogram::TransientHistogram;

/// A `height x width x channels` stack of histograms sharing one time axis.
///
/// Storage order is `(row, col, channel, bin)` with bins fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientVideo {
    height: usize,
    width: usize,
    channels: usize,
    n_bins: usize,
    bin_width_s: f64,
    t0_offset_bins: f64,
    data: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl TransientVideo {
    pub fn zeros(
        height: usize,
        width: usize,
        channels: usize,
        n_bins: usize,
        bin_width_s: f64,
        t0_offset_bins: f64,
    ) -> Result<Self> {
        let len = height * width * channels * n_bins;
        Self::from_data(height, width, channels, n_bins, bin_width_s, t0_offset_bins, vec![0.0; len])
    }

    pub fn from_data(
        height: usize,
        width: usize,
        channels: usize,
        n_bins: usize,
        bin_width_s: f64,
        t0_offset_bins: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || n_bins == 0 {
            return Err(Error::InvalidInput("video dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!("channels must be 1 or 3, got {channels}")));
        }
        if !(bin_width_s > 0.0 && bin_width_s.is_finite()) || !t0_offset_bins.is_finite() {
            return Err(Error::InvalidInput("bin width must be positive and time origin finite".into()));
        }
        let len = height * width * channels * n_bins;
        if data.len() != len {
            return Err(Error::shape("video payload", len, data.len()));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidData("video values must be finite and non-negative".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            n_bins,
            bin_width_s,
            t0_offset_bins,
            data,
            metadata: BTreeMap::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
    pub fn bin_width_s(&self) -> f64 {
        self.bin_width_s
    }
    pub fn t0_offset_bins(&self) -> f64 {
        self.t0_offset_bins
    }
    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
    /// Values per pixel: `channels * n_bins`.
    pub fn pixel_len(&self) -> usize {
        self.channels * self.n_bins
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// All channels of pixel `index = row * width + col`, channel-major.
    pub fn pixel(&self, index: usize) -> &[f64] {
        let l = self.pixel_len();
        &self.data[index * l..(index + 1) * l]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        let l = self.pixel_len();
        &mut self.data[index * l..(index + 1) * l]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.pixel_len())
    }

    /// Overwrites a pixel, clamping round-off negatives to zero.
    pub fn set_pixel(&mut self, index: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.pixel_len() {
            return Err(Error::shape("pixel values", self.pixel_len(), values.len()));
        }
        for (d, v) in self.pixel_mut(index).iter_mut().zip(values) {
            if !v.is_finite() {
                return Err(Error::InvalidData("pixel values must be finite".into()));
            }
            *d = v.max(0.0);
        }
        Ok(())
    }

    pub fn histogram(&self, row: usize, col: usize, channel: usize) -> TransientHistogram {
        let px = self.pixel(row * self.width + col);
        let bins = px[channel * self.n_bins..(channel + 1) * self.n_bins].to_vec();
        TransientHistogram::from_clamped(bins, self.bin_width_s, self.t0_offset_bins)
    }

    /// Per-pixel intensities of bin `n`, summed over channels when `channel` is `None`.
    pub fn slice(&self, n: usize, channel: Option<usize>) -> Vec<f64> {
        self.pixels()
            .map(|px| match channel {
                Some(c) => px[c * self.n_bins + n],
                None => (0..self.channels).map(|c| px[c * self.n_bins + n]).sum(),
            })
            .collect()
    }

    /// Largest single bin value over the whole video.
    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Applies `f` to every value; results are clamped to be non-negative.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f(*v).max(0.0);
        }
        out
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self.n_bins == other.n_bins
            && self.bin_width_s == other.bin_width_s
            && self.t0_offset_bins == other.t0_offset_bins
    }
}
