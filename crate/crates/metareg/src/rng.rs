//! Deterministic seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha stream whose seed is
//! derived from the master seed plus a purpose tag, so dataset builds,
//! initialization and training are reproducible bit-exactly and independent
//! of execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for seed mixing.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a list of tags.
pub fn derive(parent: u64, tags: &[u64]) -> u64 {
    let mut s = mix64(parent);
    for &t in tags {
        s = mix64(s ^ mix64(t));
    }
    s
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Purpose tags for seed derivation; fixed constants, never reordered.
pub mod tag {
    pub const DATASET_TRAIN: u64 = 1;
    pub const DATASET_EVAL: u64 = 2;
    pub const INIT: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const LATENT_EPS: u64 = 5;
    pub const TASK: u64 = 6;
    pub const SHAPE: u64 = 7;
    pub const TRANSFORM: u64 = 8;
    pub const NOISE: u64 = 9;
}
