//! Deterministic derivation of independent RNG streams.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a base
//! seed mixed with a path of integers (trial index, stream tag, ...), so
//! results never depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used across the crate.
pub mod stream {
    pub const PAIRS: u64 = 1;
    pub const REWARDS: u64 = 2;
    pub const CONTEXTS: u64 = 3;
    pub const PLANNER: u64 = 4;
    pub const PROJECTION: u64 = 5;
    pub const EMPIRICAL: u64 = 6;
    pub const INSTANCE: u64 = 7;
    pub const TRIALS: u64 = 8;
    pub const BARRIER: u64 = 9;
    pub const RAGE: u64 = 10;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices into a new 64-bit seed.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// RNG for the stream identified by `(base, path)`.
pub fn rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}
