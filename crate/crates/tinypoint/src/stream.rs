//! Derivation of independent, reproducible RNG streams.
//!
//! Every stochastic choice in the crate (data generation, shuffling, weight
//! init, subnet sampling, dropout) draws from its own ChaCha8 stream keyed by
//! an explicit `(seed, tags...)` tuple, so adding or removing one consumer
//! never perturbs another and runs replay bit-identically across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output mixing; full-avalanche on 64 bits.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold tags into a seed, mixing after every word.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t));
    }
    h
}

/// FNV-1a, for keying streams by names.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A fresh RNG on the stream identified by `(seed, tags)`.
pub fn rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}
