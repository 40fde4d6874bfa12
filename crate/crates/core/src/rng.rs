//! Seed derivation shared by every stochastic step.
//!
//! All randomness flows through [`ChaCha8Rng`], whose output stream is fixed
//! by the algorithm and independent of platform or word size. Sub-streams are
//! derived from a parent seed with a SplitMix64 finalizer so that, e.g., the
//! fourth candidate of a search never shares a stream with the fifth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives an independent seed for `(parent, tag, index)`.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ fnv1a(tag)) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(parent: u64, tag: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(parent, tag, index))
}
