//! EEG visual representation learning toolkit.
//!
//! Loads EEGPACK containers, trains recurrent and convolutional EEG encoders
//! with semi-hard triplet or supervised objectives, learns a joint EEG-image
//! embedding, synthesizes images from EEG features with a conditional GAN
//! and evaluates all of it.

pub mod clip;
pub mod data;
pub mod encoders;
pub mod error;
pub mod gan;
pub mod eval;
pub mod hash;
pub mod metric;
pub mod nn;

pub use error::{Error, ErrorClass, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The one RNG type used across the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a master seed and a purpose tag.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, mixed with splitmix64
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
