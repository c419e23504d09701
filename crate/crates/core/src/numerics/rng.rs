//! Seed derivation. Every stochastic component draws from its own ChaCha
//! stream so that adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels for the independent random sources of a run.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const UNDERSAMPLE: u64 = 5;
    pub const WORLD: u64 = 6;
    pub const PLACEMENT: u64 = 7;
    pub const BENCH: u64 = 8;
}

pub fn stream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

/// Combines a seed with a sub-index (sample number, epoch, ...).
pub fn mix(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed
        ^ index
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
