//! Single-photon detector model: per-bin Poisson counts accumulated over
//! `P` pulse periods, `counts[n] ~ Poisson(P * eta * lambda[n] + B)` with
//! background `B = P * (eta * ambient + dark)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::transport::TimeBinning;
use crate::error::{Error, Result};
use crate::histogram::TransientHistogram;
use crate::rng;

/// Largest per-pulse detection probability for which pile-up is negligible.
pub const LOW_FLUX_LIMIT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpadModel {
    pub pulses: u64,
    pub eta: f64,
    /// Dark counts per bin per pulse period.
    pub dark_counts: f64,
    pub binning: TimeBinning,
}

impl SpadModel {
    pub fn validate(&self) -> Result<()> {
        if self.pulses == 0 {
            return Err(Error::Config("pulse count must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config("detection efficiency must lie in (0, 1]".into()));
        }
        if !(self.dark_counts >= 0.0 && self.dark_counts.is_finite()) {
            return Err(Error::Config("dark counts must be >= 0".into()));
        }
        self.binning.validate()
    }

    /// Background counts per bin over all pulses.
    pub fn background(&self, ambient_rate: f64) -> f64 {
        self.pulses as f64 * (self.eta * ambient_rate + self.dark_counts)
    }

    /// Poisson rate of each bin.
    pub fn rates(&self, lambda: &[f64], ambient_rate: f64) -> Result<Vec<f64>> {
        let p = self.pulses as f64;
        let bg = self.background(ambient_rate);
        lambda
            .iter()
            .map(|l| {
                let r = p * self.eta * l + bg;
                if !r.is_finite() || r < 0.0 || !(*l >= 0.0) {
                    Err(Error::InvalidInput(format!("rate {r} is not a finite non-negative value")))
                } else {
                    Ok(r)
                }
            })
            .collect()
    }

    /// Expected detections per pulse summed over the window.
    pub fn detection_probability(&self, lambda: &[f64], ambient_rate: f64) -> f64 {
        let bg = self.eta * ambient_rate + self.dark_counts;
        lambda.iter().map(|l| self.eta * l + bg).sum()
    }
}

/// Below this rate a draw is Bernoulli(r); the Poisson sampler of `rand_distr`
/// returns -1 for rates whose `exp(-r)` rounds to one.
const TINY_RATE: f64 = 1e-9;

pub fn sample_counts(rates: &[f64], seed: u64) -> Vec<f64> {
    let mut stream = rng::stream(&[seed]);
    rates
        .iter()
        .map(|&r| {
            if r > 0.0 && r < TINY_RATE {
                f64::from(stream.gen::<f64>() < r)
            } else if r > 0.0 {
                Poisson::new(r).expect("rate is positive and finite").sample(&mut stream)
            } else {
                0.0
            }
        })
        .collect()
}

/// Draws integer photon counts for one histogram.
pub fn measure(lambda: &TransientHistogram, spad: &SpadModel, ambient_rate: f64, seed: u64) -> Result<TransientHistogram> {
    spad.validate()?;
    let rates = spad.rates(lambda.bins(), ambient_rate)?;
    TransientHistogram::new(sample_counts(&rates, seed), lambda.bin_width_s(), lambda.t0_offset_bins())
}
