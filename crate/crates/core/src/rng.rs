//! Seeded, platform-stable random streams.
//!
//! Every stochastic component (initialization, batch selection, Bernoulli
//! input mixing, synthetic data) draws from an [`RngState`]. The generator is
//! xoshiro256++ seeded through SplitMix64, so a seed yields the same draws on
//! every platform and toolchain.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a parallel consumer: seeded with `seed ^ stream_id`.
    ///
    /// The parent state is not advanced, so the split is a pure function of
    /// the parent seed and the stream id.
    pub fn split(&self, stream_id: u64) -> RngState {
        RngState::new(self.seed ^ stream_id)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Stream id for sample `slot` of batch `iter`; distinct for all realistic sizes.
pub fn stream_id(iter: u64, slot: u64) -> u64 {
    // high bit keeps these ids disjoint from small literal ids used elsewhere
    (1 << 63) | (iter << 24) | (slot & 0xFF_FFFF)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn xoshiro_reference_prefix() {
        // SplitMix64 seeding followed by xoshiro256++, computed independently.
        // A change here means seeds no longer reproduce old runs.
        let mut r = RngState::new(42);
        let first: Vec<u64> = (0..3).map(|_| r.inner.random::<u64>()).collect();
        assert_eq!(
            first,
            vec![15021278609987233951, 5881210131331364753, 18149643915985481100]
        );
    }

    #[test]
    fn split_streams_differ() {
        let root = RngState::new(7);
        let mut a = root.split(1);
        let mut b = root.split(2);
        assert_ne!(a.uniform().to_bits(), b.uniform().to_bits());
    }
}
