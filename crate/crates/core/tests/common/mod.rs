#![allow(dead_code)]

pub mod dft;
pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slr_core::AudioClip;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform noise in `[-amp, amp)`.
pub fn noise_clip(seconds: f64, amp: f32, seed: u64) -> AudioClip {
    let mut r = rng(seed);
    let n = (seconds * 16_000.0).round() as usize;
    AudioClip::from_samples((0..n).map(|_| r.random_range(-amp..amp)).collect()).unwrap()
}
