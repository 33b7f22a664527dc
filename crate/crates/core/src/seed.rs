//! Stable seed derivation.
//!
//! A single user-facing seed fans out to every randomized component through
//! [`derive`], keyed by a component label and an index. The mixing is a fixed
//! FNV-1a label hash followed by SplitMix64 finalization, so derived seeds
//! never change across platforms or toolchain versions, and adding a new
//! label leaves every existing stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` for the component `label` at position `index`.
pub fn derive(base: u64, label: &str, index: u64) -> u64 {
    let a = splitmix64(base ^ fnv1a(label));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Deterministic generator for a derived stream.
pub fn rng(base: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, label, index))
}
