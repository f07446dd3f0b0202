//! Named deterministic random streams.
//!
//! Every stream is a ChaCha8 generator whose seed mixes the run seed with the
//! stream name, so `init`, `masking`, `batching` and `synthgen` draws never
//! interfere and reproduce on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const INIT: &str = "init";
pub const MASKING: &str = "masking";
pub const BATCHING: &str = "batching";
pub const SYNTHGEN: &str = "synthgen";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Debug)]
pub struct RngStream {
    name: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, name: &str) -> Self {
        let derived = splitmix64(seed ^ splitmix64(fnv1a(name.as_bytes())));
        Self {
            name: name.to_string(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(derived),
        }
    }

    /// Independent child stream, e.g. one per station or per ablation run.
    pub fn substream(&self, name: &str) -> Self {
        Self::new(self.seed, &format!("{}/{name}", self.name))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        if std <= 0.0 {
            return mean;
        }
        Normal::new(mean, std)
            .expect("finite std")
            .sample(&mut self.rng)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(42, MASKING);
        let mut b = RngStream::new(42, MASKING);
        for _ in 0..100 {
            assert_eq!(a.uniform(0.0, 1.0).to_bits(), b.uniform(0.0, 1.0).to_bits());
        }
    }

    #[test]
    fn streams_are_independent() {
        let mut a = RngStream::new(42, MASKING);
        let mut b = RngStream::new(42, BATCHING);
        let xa: Vec<f64> = (0..8).map(|_| a.uniform(0.0, 1.0)).collect();
        let xb: Vec<f64> = (0..8).map(|_| b.uniform(0.0, 1.0)).collect();
        assert_ne!(xa, xb);
        let mut c = RngStream::new(43, MASKING);
        assert_ne!(xa[0], c.uniform(0.0, 1.0));
    }

    #[test]
    fn degenerate_ranges() {
        let mut r = RngStream::new(1, "t");
        assert_eq!(r.uniform(2.0, 2.0), 2.0);
        assert_eq!(r.normal(3.0, 0.0), 3.0);
        assert!(!r.bernoulli(0.0));
        assert!(r.bernoulli(1.0));
    }
}
