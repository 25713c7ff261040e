//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a hash of (master seed, stream tag, index), so results never
//! depend on iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Distinct tags keep unrelated draws decorrelated.
pub mod stream {
    pub const PROTOTYPE: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const FEATURIZE: u64 = 6;
    pub const MASKS: u64 = 7;
    pub const ORDER: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn rng(master: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive(master, tag, index))
}
