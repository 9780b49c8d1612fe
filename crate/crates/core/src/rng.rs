//! Seed derivation.
//!
//! Every unit of randomized work (a tree, a permuted column, a knockoff row)
//! gets its own generator seeded from `(seed, unit index)`, so results never
//! depend on how the work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream index into an independent 64-bit seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Stream tags for the different consumers of a single user-facing seed.
pub(crate) mod streams {
    pub const SPLIT: u64 = 0x5350_4c49_5400_0000;
    pub const CV_FOLDS: u64 = 0x4356_0000_0000_0000;
    pub const CV_FOREST: u64 = 0x4356_4652_0000_0000;
    pub const GMM_INIT: u64 = 0x474d_4d00_0000_0000;
    pub const PERM_TEST: u64 = 0x5045_524d_0000_0000;
    pub const SYNTH_X: u64 = 0x5359_4e58_0000_0000;
    pub const SYNTH_Y: u64 = 0x5359_4e59_0000_0000;
}
