//! Seeded randomness shared by the generator, the trainer and the baselines.
//!
//! Every stream is a ChaCha8 generator. Uniform reals are built from the raw
//! 64-bit output as `(u >> 11) * 2^-53`, and bounded indices as
//! `floor(uniform * k)`, so a dataset can be regenerated by any
//! implementation that reproduces ChaCha8.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Name recorded in dataset manifests.
pub const PRNG_ALGORITHM: &str = "chacha8; f64=(u64>>11)*2^-53; index=floor(f64*k); subseed=splitmix64-fold";

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a tuple of integers into an independent sub-seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_0FF1_0AD0_0000u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn uniform01(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

/// Uniform index in `0..k`. `k` must be positive.
pub fn index(rng: &mut Rng, k: usize) -> usize {
    debug_assert!(k > 0);
    ((uniform01(rng) * k as f64) as usize).min(k - 1)
}

pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = index(rng, i + 1);
        items.swap(i, j);
    }
}
