//! Seed derivation and the portable generator used throughout the crate.
//!
//! Every stochastic component (splits, synthetic data, augmentation, weight
//! init, dropout, bootstrap resampling) draws from a [`ChaCha8Rng`] seeded
//! through [`derive_seed`], so a run is reproducible from its named seeds on
//! any platform.

pub use rand_chacha::ChaCha8Rng;

/// SplitMix64 step. Fixed constants, same output everywhere.
pub fn splitmix64(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a base seed and a stream id.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(1)))
}

/// Portable seeded generator for the given (base, stream) pair.
pub fn seeded(base: u64, stream: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}
