//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a global
//! seed mixed with a small tuple of integers (epoch, subsample size,
//! replicate index, ...). The mixing is SplitMix64 applied per component, so
//! a stream can be re-created in isolation, e.g. when resuming training at a
//! given epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed` with each of `parts` in order.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    rng(derive(seed, parts))
}
