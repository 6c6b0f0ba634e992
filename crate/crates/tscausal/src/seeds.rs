//! Deterministic derivation of per-stage RNG seeds from one base seed.
//!
//! Every stochastic stage (parameter init, data generation, clustering
//! restarts, ...) draws its own seed through [`derive`] so that stages stay
//! statistically independent while the whole pipeline remains reproducible
//! from a single number.

/// SplitMix64 finalizer: a cheap, well-mixed 64-bit permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for sub-stream `stream` of `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}
