//! Seed derivation and complex Gaussian draws.
//!
//! Every random stream in the simulator is a [`ChaCha8Rng`] seeded from a
//! master seed plus a list of tags (round, UE id, stage). Streams are
//! therefore independent of evaluation order and thread count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a sequence of tags into a child seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stage tags used with [`derive_seed`].
pub mod stage {
    pub const CHANNEL: u64 = 1;
    pub const PILOT_NOISE: u64 = 2;
    pub const UPLINK_NOISE: u64 = 3;
    pub const OFFSETS: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const DECORRELATE: u64 = 6;
    pub const PHASE: u64 = 7;
    pub const DATA: u64 = 8;
    pub const INIT: u64 = 9;
    pub const DATASET: u64 = 10;
}

/// One draw from CN(0, variance).
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    if variance == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
