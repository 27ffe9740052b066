//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream derived from
//! `(seed, stream id)`, so adding draws to one component never perturbs
//! another and results are identical across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream identifiers. Values are part of the reproducibility contract.
pub mod streams {
    pub const CONVERT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const REWARD_MODEL: u64 = 3;
    pub const POLICY_INIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const MIXED_FIT: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
    pub const DIAGNOSTIC: u64 = 8;
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Inverse-CDF draw from a probability vector. Falls back to the last arm
/// with positive mass when rounding leaves the cumulative sum below `u`.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Standard normal draw via Box-Muller.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
