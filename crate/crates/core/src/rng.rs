//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic step (ray jitter, batch selection, photon counts) draws
//! from a stream keyed by a tuple such as `(seed, view, pixel)`, so results
//! never depend on thread count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, k| splitmix64(acc ^ splitmix64(*k)))
}

pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(keys))
}
