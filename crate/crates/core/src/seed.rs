//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from the master seed plus a
//! stream tag and an index, so runs can be replayed piecewise and workers
//! never share a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are part of the replay format; do not renumber.
pub mod stream {
    pub const TRANSFORMS: u64 = 1;
    pub const MASKGEN: u64 = 2;
    pub const BOOST: u64 = 3;
    pub const HOLDOUT: u64 = 4;
    pub const DIRECTIONS: u64 = 5;
    pub const BASELINE: u64 = 6;
    pub const REDRAW: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a parent seed with a child index into an independent child seed.
pub fn derive(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn derive2(parent: u64, a: u64, b: u64) -> u64 {
    derive(derive(parent, a), b)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
