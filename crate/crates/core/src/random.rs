//! Seeded randomness: the RNG type used everywhere, complex Gaussian draws and
//! the seed-mixing rule used by the sweep runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::C64;

/// Generator used for every simulated quantity. Callers own their state, so
/// independent threads never share one.
pub type SimRng = ChaCha8Rng;

/// Sub-streams of a single trial seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Channel = 0,
    Schedule = 1,
    Noise = 2,
    Design = 3,
}

/// Generator for one stream of a trial.
pub fn rng_for(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// One circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn complex_gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, var: f64) -> Vec<C64> {
    (0..len).map(|_| complex_gaussian(rng, var)).collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `master` with a splitmix64 chain:
/// `h <- splitmix64(h ^ splitmix64(part))` for each part in order.
pub fn mix_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |h, &p| splitmix64(h ^ splitmix64(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ_and_repeat() {
        let a: Vec<u64> = (0..4).map(|_| rng_for(7, Stream::Channel).random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = rng_for(7, Stream::Channel).random();
        let y: u64 = rng_for(7, Stream::Noise).random();
        assert_ne!(x, y);
    }

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix_seed(1, &[2, 3]), mix_seed(1, &[3, 2]));
        assert_eq!(mix_seed(1, &[2, 3]), mix_seed(1, &[2, 3]));
        assert_ne!(mix_seed(1, &[0]), mix_seed(2, &[0]));
    }

    #[test]
    fn complex_gaussian_has_requested_power() {
        let mut rng = rng_for(11, Stream::Noise);
        let n = 40_000;
        let p: f64 = (0..n).map(|_| complex_gaussian(&mut rng, 2.5).norm_sqr()).sum::<f64>() / n as f64;
        assert!((p - 2.5).abs() < 0.05 * 2.5, "power {p}");
    }
}
