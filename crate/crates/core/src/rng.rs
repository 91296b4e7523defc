//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream created
//! with `ChaCha8Rng::seed_from_u64`; Gaussian variates come from the ziggurat
//! sampler of `rand_distr::StandardNormal`. Both are portable, so a seed gives
//! the same numbers on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named stage of a seeded pipeline.
pub fn substream(seed: u64, stage: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

#[inline]
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Seed for one stage of a multi-stage pipeline (SplitMix64 finalizer of
/// `seed + stage * golden_gamma`).
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
