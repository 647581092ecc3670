//! Seed derivation for every randomized component.
//!
//! All randomness flows from a root seed through [`derive_seed`], which mixes
//! a stream tag and an index with SplitMix64. Streams are ChaCha8 generators,
//! so a derived seed pins the whole sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn stream names into integers.
pub fn hash_str(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(root: u64, stream: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ hash_str(stream)).wrapping_add(index))
}

pub fn stream(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name, index))
}
