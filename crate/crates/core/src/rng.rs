//! Reproducible random streams.
//!
//! Every random object in the crate is drawn from a ChaCha8 generator keyed by
//! a 64-bit seed and a 64-bit stream index, so independent work items can be
//! scheduled on any number of threads without changing the numbers they see.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for the `index`-th item of a batch whose base seed is `seed`.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index)
}

/// Seed for a labelled sub-experiment, e.g. a calibration run next to the
/// main run. Uses a SplitMix64 finaliser so labels do not collide with the
/// `seed + index` scheme used inside batches.
pub fn labelled_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
