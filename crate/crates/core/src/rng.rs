//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose seed is
//! derived from a base seed plus a path of integer tags, e.g.
//! `(seed, INIT)` for initialization or `(seed, EPOCH, epoch, batch)` for an
//! online training batch. Tags are folded through SplitMix64, so sibling
//! streams are statistically independent and any stream can be recreated
//! without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod tag {
    pub const INIT: u64 = 0x1417;
    pub const EPOCH: u64 = 0xE90C;
    pub const SHUFFLE: u64 = 0x5AFF;
    pub const DATASET: u64 = 0xDA7A;
    pub const PROBE_FIT: u64 = 0x9F17;
    pub const PROBE_EVAL: u64 = 0x9E7A;
    pub const METRIC: u64 = 0x3E7C;
    pub const LAYERWISE: u64 = 0x1A7E;
    pub const RETRAIN: u64 = 0x7E7A;
    pub const THEORY: u64 = 0x7E01;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a seed and a tag path into a single 64-bit stream seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Generator for the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
