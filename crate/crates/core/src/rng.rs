//! Seeded randomness. Every stochastic component draws from a ChaCha stream
//! derived from a run seed plus a fixed stream label, so adding a consumer
//! never perturbs the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, label)`.
pub fn stream(seed: u64, label: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

pub fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    rng.random_range(lo..hi)
}

pub fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut SimRng, n: usize) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
