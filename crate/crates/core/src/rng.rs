//! Reproducible random streams.
//!
//! Every replica (and every sub-stream inside a replica) gets its own
//! generator whose key is a hash of the base seed and the stream path.
//! The generator itself is ChaCha8, which is counter based, so streams
//! never overlap and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used by every sampler in the crate.
pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of child stream `index` from `seed`.
///
/// `split(seed, r)` is the seed of replica `r`; nesting gives per-rule or
/// per-phase streams.
#[inline]
pub fn split(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(GOLDEN).wrapping_mul(GOLDEN) ^ mix64(index.wrapping_add(1)))
}

/// Generator for a derived seed.
pub fn stream(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(mix64(seed))
}

/// Generator for replica `replica` of an experiment seeded with `seed`.
pub fn replica_stream(seed: u64, replica: u64) -> SimRng {
    stream(split(seed, replica))
}
