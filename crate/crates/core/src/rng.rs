//! Seeded, splittable random streams.
//!
//! Every stream is keyed by a seed plus an arbitrary path of stream ids, so
//! independent consumers (per-class templates, per-sample noise, per-epoch
//! shuffles) never share draws and results do not depend on call order.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SPLITMIX_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a seed and a path of stream ids into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &id| {
        splitmix64(acc ^ splitmix64(id.wrapping_add(0x5851_f42d_4c95_7f2d)))
    })
}

#[derive(Clone, Debug)]
pub struct Rng {
    key: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, &[])
    }

    /// Stream identified by `(seed, path...)`.
    pub fn stream(seed: u64, path: &[u64]) -> Self {
        let key = derive_key(seed, path);
        Rng {
            key,
            inner: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// Child stream derived from this stream's key; does not advance `self`.
    pub fn child(&self, id: u64) -> Self {
        Self::stream(self.key, &[id])
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        let u: f32 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn uniform_f64(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn normal(&mut self) -> f32 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
