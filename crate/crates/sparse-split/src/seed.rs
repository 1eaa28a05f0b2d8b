//! Seed derivation for independent deterministic RNG streams.
//!
//! Every randomized step (edge placement per junction, weight init per
//! junction, shuffle per epoch) gets its own stream seed derived from the
//! master seed, so adding or reordering one step never perturbs the others.

/// SplitMix64 finalizer. Good enough to decorrelate nearby integer seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for sub-stream `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
