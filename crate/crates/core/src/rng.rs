//! Seed derivation. Every random choice in the crate flows from one run seed;
//! independent streams are carved out by tag so that adding a consumer does
//! not shift the draws of another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from `seed` and a stream tag (FNV-1a over the tag).
pub fn subseed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x1000_0000_01b3);
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// A deterministic generator for the given seed and stream tag.
pub fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, tag))
}
