//! Seeded randomness. Every sampling operation in this crate takes an
//! explicit `u64` seed and derives independent streams from it, so results
//! do not depend on thread count or call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for sub-task `stream` of a seeded computation. ChaCha streams never
/// overlap, which is what makes chunked parallel sampling reproducible.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One splitmix64 mixing step.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a word sequence to a uniform value in [-1, 1). Used by the
/// corrupted-metric negative controls, which need noise that is a
/// deterministic symmetric function of the two points.
pub fn hash_to_unit(words: &[u64], seed: u64) -> f64 {
    let mut acc = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
    for &w in words {
        acc = splitmix64(acc ^ w);
    }
    let u = (acc >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * u - 1.0
}
