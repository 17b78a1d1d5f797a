//! Random draws from the count laws, built on `rand_distr`.
//!
//! Every mixture is sampled through its latent variable so the simulator can
//! record the latent alongside the counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Poisson};

use crate::dist::CountFamily;

/// Generator for block `block` of a seeded job. Blocks use distinct ChaCha
/// streams, so results do not depend on how blocks are scheduled.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    let draw: f64 = Poisson::new(mean).expect("finite positive mean").sample(rng);
    draw as u64
}

/// Gamma with the given shape and *rate*.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, rate.recip()).expect("positive gamma parameters").sample(rng)
}

pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    Beta::new(a, b).expect("positive beta parameters").sample(rng)
}

/// Negative binomial with the given size and success probability `p`,
/// drawn as a gamma-Poisson mixture.
pub fn neg_binomial<R: Rng + ?Sized>(rng: &mut R, size: f64, p: f64) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    let theta = gamma(rng, size, p / (1.0 - p));
    poisson(rng, theta)
}

/// One draw from `family` at the given mean.
pub fn family<R: Rng + ?Sized>(rng: &mut R, family: CountFamily<f64>, mean: f64) -> u64 {
    match family {
        CountFamily::Poisson => poisson(rng, mean),
        CountFamily::Nb1(tau) => neg_binomial(rng, mean / tau, 1.0 / (1.0 + tau)),
        CountFamily::Nb2(tau) => neg_binomial(rng, 1.0 / tau, 1.0 / (1.0 + tau * mean)),
    }
}
