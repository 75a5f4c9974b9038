//! Deterministic seed derivation.
//!
//! A single global seed fans out to per-stage and per-interaction seeds:
//! `derive(seed, a, b)` folds each word into a SplitMix64 state, and stage
//! names are first hashed with 64-bit FNV-1a. The mapping is fixed, so the
//! same global seed always yields the same stream for every stage.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes `words` into `seed`.
pub fn derive(seed: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(seed), |acc, &w| splitmix64(acc ^ w))
}

/// Seed for a named pipeline stage.
pub fn stage(seed: u64, name: &str) -> u64 {
    derive(seed, &[fnv1a(name.as_bytes())])
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
