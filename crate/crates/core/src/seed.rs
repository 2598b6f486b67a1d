//! Seed derivation.
//!
//! Every stochastic component draws from its own ChaCha stream whose seed is
//! derived from a master seed, a stream tag and an index. The derivation is a
//! fixed SplitMix64 chain and will not change between versions:
//!
//! `derive(master, stream, index) = mix(mix(mix(master) ^ stream) ^ index)`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. New tags must be appended, never renumbered.
pub mod stream {
    pub const EPOCH: u64 = 0x01;
    pub const LEAF: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const VALID_TIE: u64 = 0x04;
    pub const SHUFFLE: u64 = 0x05;
    pub const SPLIT: u64 = 0x06;
    pub const STRATUM: u64 = 0x07;
    pub const ARM_TREATED: u64 = 0x08;
    pub const ARM_CONTROL: u64 = 0x09;
    pub const SUBSAMPLE: u64 = 0x0a;
    pub const DATA: u64 = 0x0b;
    pub const TEST_TIE: u64 = 0x0c;
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    mix(mix(mix(master) ^ stream) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    rng(derive(master, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen so that reports stay comparable across versions.
        assert_eq!(mix(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(derive(1, stream::EPOCH, 0), derive(1, stream::EPOCH, 1));
        assert_ne!(derive(1, stream::EPOCH, 0), derive(1, stream::LEAF, 0));
    }
}
