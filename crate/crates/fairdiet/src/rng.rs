//! Deterministic RNG streams.
//!
//! Every random choice in the pipeline draws from a ChaCha8 stream derived
//! from a user seed and a fixed salt, so distinct concerns (shuffling,
//! subsampling, diet picks, random scores) never share a stream and results
//! are reproducible regardless of call order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SALT_SHUFFLE: u64 = 0x5348_5546_464c_4531;
pub const SALT_INIT: u64 = 0x494e_4954_5041_524d;
pub const SALT_SUBSAMPLE: u64 = 0x5355_4253_414d_504c;
pub const SALT_SPLIT: u64 = 0x5350_4c49_5453_4545;
pub const SALT_CDS: u64 = 0x4344_535f_434f_494e;
pub const SALT_FACTUAL_PICK: u64 = 0x4641_4354_5049_434b;
pub const SALT_COUNTERFACTUAL_PICK: u64 = 0x4346_5f50_4943_4b53;
pub const SALT_RANDOM_SCORE: u64 = 0x524e_445f_5343_4f52;
pub const SALT_SYNTH: u64 = 0x5359_4e54_485f_4745;

/// SplitMix64 finalizer; a stable, platform-independent bit mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A ChaCha8 stream for (seed, salt).
pub fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(salt) ^ seed))
}

/// A ChaCha8 stream for (seed, salt, index), e.g. one stream per epoch.
pub fn indexed_stream(seed: u64, salt: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(splitmix64(salt) ^ seed) ^ index))
}

/// Stable uniform value in [0, 1) keyed by (seed, salt, id).
///
/// Independent of iteration order, so per-example draws survive dataset
/// reordering.
pub fn unit_f64(seed: u64, salt: u64, id: u64) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(salt) ^ seed) ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    // 53 high bits -> [0, 1)
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
