//! Seeded, reproducible random source.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Tensor};

/// Identity of the generator behind [`SeededRng`]. Recorded in every report:
/// changing the generator changes every seeded result.
pub const PRNG_IDENTITY: &str = "ChaCha8Rng (rand_chacha 0.3, seed_from_u64)";

/// Deterministic random stream. The same seed yields the same sequence,
/// bit for bit, across runs of the same build.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A child stream whose seed mixes `self.seed()` with `stream`. Does not
    /// advance `self`.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(mix(
            self.seed ^ mix(stream.wrapping_add(0x9E37_79B9_7F4A_7C15))
        ))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A tensor of values drawn uniformly from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        let data = self.uniform_vec(lo, hi, numel)?;
        Tensor::new(shape.to_vec(), data)
    }

    pub fn uniform_vec(&mut self, lo: f64, hi: f64, len: usize) -> Result<Vec<f64>> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "uniform range requires finite lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok((0..len).map(|_| self.inner.gen_range(lo..hi)).collect())
    }

    /// A draw from `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen::<bool>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
