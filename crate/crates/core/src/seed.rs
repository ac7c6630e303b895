//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from one
//! top-level `u64`. A child seed is `mix(parent ^ fnv1a(tag))` followed by
//! `mix(.. ^ index)`, where `mix` is the SplitMix64 finalizer and `fnv1a` is
//! 64-bit FNV-1a over the UTF-8 tag. Both functions are fixed here and must
//! not change, or saved cohorts and reports stop being reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the seed of stream `tag`/`index` from `parent`.
pub fn derive(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ fnv1a(tag)) ^ index)
}

pub fn rng(parent: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen: changing these breaks reproducibility of stored outputs.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive(7, "subject", 3), derive(7, "subject", 3));
        assert_ne!(derive(7, "subject", 3), derive(7, "subject", 4));
        assert_ne!(derive(7, "subject", 3), derive(7, "fold", 3));
    }
}
