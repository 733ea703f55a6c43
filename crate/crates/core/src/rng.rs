//! Deterministic stream derivation.
//!
//! Every random stream in the simulator is derived from a master seed plus a
//! small tuple of tags (partner id, round, purpose), so results do not depend
//! on thread scheduling or on the order in which streams are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream purposes. Values are arbitrary but fixed.
pub mod tag {
    pub const INIT: u64 = 0x11;
    pub const SHUFFLE: u64 = 0x22;
    pub const DROPOUT: u64 = 0x33;
    pub const DP_NOISE: u64 = 0x44;
    pub const TEACHER: u64 = 0x55;
    pub const SAMPLES: u64 = 0x66;
    pub const ATTACK: u64 = 0x77;
    pub const KEYS: u64 = 0x88;
    pub const SUBSET: u64 = 0x99;
    pub const FOREST: u64 = 0xAA;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of tags into a new 64-bit seed.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t));
    }
    h
}

pub fn derive(seed: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(mix(seed, tags))
}
