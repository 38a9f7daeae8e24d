//! Seed derivation for named and numbered random substreams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child stream `index` under `parent`.
pub fn child_seed(parent: u64, index: u64) -> u64 {
    mix64(parent ^ mix64(index.wrapping_add(0x5EED)))
}

/// Seed of the named substream (e.g. `"search"`, `"shuffle"`) under `parent`.
pub fn named_seed(parent: u64, name: &str) -> u64 {
    // FNV-1a over the name keeps substreams stable across builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    child_seed(parent, h)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_are_distinct_and_stable() {
        assert_ne!(named_seed(1, "search"), named_seed(1, "shuffle"));
        assert_ne!(child_seed(1, 0), child_seed(1, 1));
        assert_eq!(named_seed(7, "search"), named_seed(7, "search"));
    }
}
