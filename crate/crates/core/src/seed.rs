//! Deterministic seed derivation.
//!
//! Every random stream in the crate is derived from a user seed plus a small
//! tuple of integers, so results do not depend on evaluation order.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and an ordered list of stream identifiers.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
