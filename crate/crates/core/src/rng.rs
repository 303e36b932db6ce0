//! Seed derivation. Every randomized stage draws from its own generator whose
//! seed is a pure function of the root seed and a path of stream labels, so the
//! result of a stage does not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from `parent` and a stream label.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Derives a seed along a path of labels.
pub fn derive_path(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(root, |s, &l| derive_seed(s, l))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(root: u64, path: &[u64]) -> Rng {
    rng_from_seed(derive_path(root, path))
}

/// Stream labels used across the crate.
pub mod stream {
    pub const TRAJGEN: u64 = 1;
    pub const SCENE: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const VEM: u64 = 5;
    pub const CASCADE: u64 = 6;
    pub const SEQUENCE: u64 = 7;
    pub const INIT: u64 = 8;
    pub const MOT3T: u64 = 9;
    pub const FINETUNE: u64 = 10;
}
