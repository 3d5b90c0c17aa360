//! Seed derivation helpers.
//!
//! All randomness in the crate flows from explicit `u64` seeds. Child seeds are
//! derived by mixing a parent seed with a list of integers through the
//! SplitMix64 finaliser, so the same `(parent, path)` always yields the same
//! stream no matter which thread asks for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and a path of integers.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(parent), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Stable 64-bit hash of a string (FNV-1a), used to fold identifiers into seeds.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A portable, reproducible generator for the given seed.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
