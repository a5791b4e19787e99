//! Named random substreams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of the substream `name` under `root`.
pub fn substream(root: u64, name: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(name)))
}

pub fn rng(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(root, name))
}

/// Substream indexed by a counter, e.g. one per training step.
pub fn indexed_rng(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(substream(root, name) ^ splitmix64(index)))
}
