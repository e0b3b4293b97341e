//! Deterministic seed derivation.
//!
//! Every random choice in the pipeline is keyed off a user-visible base seed
//! plus a chain of context tags, so any step (a mask draw, an epoch shuffle,
//! one bootstrap trial) can be reproduced in isolation without threading RNG
//! state through the call graph.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; stable across platforms and releases.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and an ordered list of context tags.
pub fn derive(base: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(base);
    for &t in tags {
        acc = mix(acc ^ mix(t));
    }
    acc
}

/// Fixed-algorithm RNG for a derived seed. ChaCha8 keeps the stream identical
/// across platforms, unlike `StdRng` whose algorithm is unspecified.
pub fn rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tags))
}

/// Stable tag for a string key (e.g. a language name). FNV-1a folded through
/// the same finalizer as the numeric tags.
pub fn tag_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(h)
}

/// Tag namespace for the different random decision points. Keeping them in one
/// place avoids accidental stream collisions between subsystems.
pub mod tags {
    pub const SPLIT: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const SYNTH: u64 = 3;
    pub const INIT: u64 = 4;
    pub const MASK: u64 = 5;
    pub const EPOCH: u64 = 6;
    pub const EVAL_TRIAL: u64 = 7;
    pub const PROBE: u64 = 8;
    pub const FINETUNE: u64 = 9;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derive_is_deterministic() {
        assert_eq!(derive(7, &[1, 2, 3]), derive(7, &[1, 2, 3]));
        assert_ne!(derive(7, &[1, 2, 3]), derive(7, &[1, 3, 2]));
        assert_ne!(derive(7, &[1]), derive(8, &[1]));
    }

    #[test]
    fn rng_streams_are_stable() {
        let mut a = rng(42, &[tags::MASK, 0]);
        let mut b = rng(42, &[tags::MASK, 0]);
        for _ in 0..16 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }
}
