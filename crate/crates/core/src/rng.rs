//! Seed derivation. Every random decision in the pipeline draws from a
//! ChaCha stream identified by `(seed, tag, index)`, so unrelated consumers
//! never perturb each other's sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract.
pub mod tag {
    pub const SOURCE_BATCH: u64 = 1;
    pub const TARGET_BATCH: u64 = 2;
    pub const MIX: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const INIT: u64 = 5;
    pub const KMEANS: u64 = 6;
    pub const TEACHER: u64 = 7;
    pub const STUDENT: u64 = 8;
    pub const SYNTH: u64 = 9;
    pub const SUBSAMPLE: u64 = 10;
    pub const DISTILL_BATCH: u64 = 11;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed; used to give teachers, students and restarts their own seeds.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_mul(0xA24B_AED4_963E_E407) ^ splitmix64(index)))
}

pub fn substream(seed: u64, tag: u64, index: u64) -> PipelineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix64(tag << 40 ^ index));
    rng
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>()
}

/// Standard normal draw (Box–Muller).
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - unit(rng);
    let u2 = unit(rng);
    crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(core::f64::consts::TAU * u2)
}
