//! Seed derivation.

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `base` and a list of salts.
pub fn mix_seed(base: u64, salts: &[u64]) -> u64 {
    salts.iter().fold(splitmix64(base), |acc, &s| splitmix64(acc ^ s))
}
