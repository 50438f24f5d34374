use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Seeded generator used everywhere randomness is needed.
///
/// Xoshiro256++ whose state is expanded from the 64-bit seed with splitmix64,
/// so equal seeds give equal streams on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Independent child stream, used to decouple subsystems that share a seed.
    pub fn fork(&mut self, salt: u64) -> Self {
        Self::new(self.inner.next_u64() ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn unit_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)` (returns `lo` when the interval is empty).
    pub fn uniform_f32(&mut self, lo: f32, hi: f32) -> f32 {
        if hi <= lo {
            return lo;
        }
        (f64::from(lo) + self.unit_f64() * f64::from(hi - lo)) as f32
    }

    /// Uniform integer in the closed interval `[lo, hi]`.
    pub fn uniform_u32(&mut self, lo: u32, hi: u32) -> u32 {
        if hi <= lo {
            return lo;
        }
        self.inner.random_range(lo..=hi)
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.inner.random_range(0..len)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit_f64() < p
    }

    pub fn normal_f32(&mut self) -> f32 {
        let v: f64 = StandardNormal.sample(&mut self.inner);
        v as f32
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}
