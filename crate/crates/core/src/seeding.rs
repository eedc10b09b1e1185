//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! keyed by a root seed mixed with the identifiers of the thing being
//! generated, so results never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

// stream tags
pub const TAG_LIBRARY: u64 = 0x4c49_4252;
pub const TAG_SCENE: u64 = 0x5343_4e45;
pub const TAG_SEGMENT: u64 = 0x5345_474d;
pub const TAG_ACTUATION: u64 = 0x4143_5455;
pub const TAG_KMEANS: u64 = 0x4b4d_4e53;
pub const TAG_DESCRIPTOR: u64 = 0x4445_5343;
pub const TAG_MATCH: u64 = 0x4d41_5443;
pub const TAG_RANSAC: u64 = 0x5241_4e53;
pub const TAG_BUFFER: u64 = 0x4255_4646;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = rng(7, &[TAG_SCENE, 3]).random();
        let b: u64 = rng(7, &[TAG_SCENE, 3]).random();
        let c: u64 = rng(7, &[TAG_SCENE, 4]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(mix(1, &[2, 3]), mix(1, &[3, 2]));
    }
}
