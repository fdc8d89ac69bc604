//! Seedable, splittable random streams.
//!
//! Every stochastic component draws from a ChaCha8 generator. Independent
//! substreams are addressed by a key path (for example `[snr_index, chunk]`)
//! folded into the 64-bit ChaCha stream id, so results never depend on how
//! work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub type SimRng = ChaCha8Rng;

/// Named generator selectable from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RngKind {
    #[default]
    Chacha8,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream for `(seed, key...)`.
pub fn substream(seed: u64, key: &[u64]) -> SimRng {
    let stream = key.iter().fold(0x5eed_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)));
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal draw converted into the working scalar.
#[inline]
pub fn normal<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R) -> T {
    let x: f64 = StandardNormal.sample(rng);
    T::lit(x)
}

/// Circularly symmetric complex Gaussian with variance `var`.
#[inline]
pub fn complex_normal<T: Scalar, R: rand::Rng + ?Sized>(rng: &mut R, var: T) -> num_complex::Complex<T> {
    let s = (var / T::lit(2.0)).sqrt();
    let re: T = normal(rng);
    let im: T = normal(rng);
    num_complex::Complex::new(re * s, im * s)
}
