//! Seed derivation and RNG construction.
//!
//! Every random draw in the simulator comes from a `ChaCha8Rng` seeded by
//! [`derive_seed`], so a run is a pure function of its experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered list of integers into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x2545_F491_4F6C_DD1D, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream tags keep independent consumers of one experiment seed apart.
pub mod stream {
    pub const DATASET: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const GLOBAL_INIT: u64 = 3;
    pub const LOCAL_TRAIN: u64 = 4;
    pub const BEHAVIOR: u64 = 5;
    pub const FOREIGN: u64 = 6;
    pub const HOLDOUT: u64 = 7;
    pub const STAGE1: u64 = 8;
    pub const STAGE2: u64 = 9;
}
