//! Deterministic, platform-independent random streams.
//!
//! All sampling in the crate goes through [`Rng`], a ChaCha8 stream wrapper.
//! Sub-streams are derived by mixing the base seed with a domain tag and
//! integer ids, so parallel workers get reproducible, independent streams
//! regardless of scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn mix(acc: u64, v: u64) -> u64 {
    splitmix64(acc ^ v.wrapping_mul(0x9e3779b97f4a7c15))
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream from `(seed, domain, ids...)`.
    pub fn derive(seed: u64, domain: &str, ids: &[u64]) -> Self {
        let mut acc = splitmix64(seed);
        for byte in domain.bytes() {
            acc = mix(acc, byte as u64);
        }
        for &id in ids {
            acc = mix(acc, id);
        }
        Rng::from_seed(acc)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        // 53 high bits -> exactly representable uniform double.
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection sampling avoids modulo bias.
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal draw (Box–Muller, consuming two uniforms).
    pub fn next_standard_normal(&mut self) -> f64 {
        use rand::Rng as _;
        self.inner.sample(rand_distr::StandardNormal)
    }

    /// Sample from Beta(a, b).
    pub fn next_beta(&mut self, a: f64, b: f64) -> f64 {
        use rand::Rng as _;
        let beta = rand_distr::Beta::new(a, b).expect("valid beta parameters");
        self.inner.sample(beta)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices from [0, n), in random order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        use rand::seq::index::sample;
        sample(&mut self.inner, n, k).into_vec()
    }
}
