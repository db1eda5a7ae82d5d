//! Deterministic, addressable random streams.
//!
//! Every stochastic choice in the pipeline draws from a stream addressed by
//! `(base_seed, tags...)`. Streams are independent of iteration order, so
//! datasets, crafted OOD samples, and augmented views are reproducible even
//! when work is sharded across threads or a run is resumed mid-way.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a tag path into a single 64-bit stream key.
pub fn stream_key(base_seed: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(base_seed ^ 0x6a09_e667_f3bc_c908);
    for &t in tags {
        acc = mix(acc ^ mix(t));
    }
    acc
}

/// A seeded ChaCha8 stream for the given tag path.
pub fn stream(base_seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(base_seed, tags))
}

/// Tag constants so call sites don't collide by accident.
pub mod tag {
    pub const DATASET: u64 = 1;
    pub const AOOD: u64 = 2;
    pub const VIEW: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SALIENCY: u64 = 5;
    pub const PRETRAIN: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const NOISE: u64 = 8;
    pub const PROBE: u64 = 9;
}
