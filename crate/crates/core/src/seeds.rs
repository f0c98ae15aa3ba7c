//! Seed derivation so every random stream (per step, per batch item, per
//! image) is a pure function of the run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix `base` with a sequence of stream identifiers.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags, so two consumers of the same step never share a stream.
pub mod stream {
    pub const BATCH: u64 = 1;
    pub const DEPTH_MASK: u64 = 2;
    pub const EGO_MASK: u64 = 3;
    pub const INIT: u64 = 4;
    pub const CORRUPT: u64 = 5;
    pub const OCCLUDE: u64 = 6;
    pub const SCENE: u64 = 7;
}
