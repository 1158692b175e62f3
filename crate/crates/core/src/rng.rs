//! Seed derivation.
//!
//! Every random stream in a run is `ChaCha8Rng` seeded from
//! `derive_seed(run_seed, tag, index)`: the tag names the consumer (for
//! example `"energy-decay/gibbs"`) and the index separates replicates or grid
//! cells. Streams for different `(tag, index)` pairs are unrelated, and a
//! given triple always yields the same stream, so parallel replicas are
//! reproducible regardless of scheduling.

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
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(tag)) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(seed: u64, tag: &str, index: u64) -> Rng {
    from_seed(derive_seed(seed, tag, index))
}

/// Stream for an already derived seed.
pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
