//! Derivation of independent RNG streams from structured keys.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Folds `parts` into one 64-bit seed with the splitmix64 finalizer, so that keys
/// differing in any part give unrelated streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x6a09_e667_f3bc_c908;
    for &p in parts {
        h = mix(h ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Stream purposes, used as the first key part so unrelated uses never share a stream.
pub mod purpose {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const RANDOM_CLASS: u64 = 3;
    pub const POLICY_DRAW: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const TEST_RANDOM_CLASS: u64 = 6;
    pub const BRANCH_INIT: u64 = 7;
    pub const DATA: u64 = 8;
    pub const OTHER_GENERATOR: u64 = 9;
    pub const REFLECTIVE_INIT: u64 = 10;
}
