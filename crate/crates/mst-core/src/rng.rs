//! Counter-based random streams built on the SplitMix64 finalizer.
//!
//! Every consumer (dataset generation, SGD batch sampling, k-means seeding)
//! derives an independent stream from a root seed plus a label path, so
//! results never depend on worker scheduling order and any row block can be
//! regenerated in isolation.  The exact algorithms are fixed in FORMATS.md;
//! changing them changes every generated dataset.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: bijective 64-bit mix.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream labels; see FORMATS.md before renumbering.
pub mod label {
    pub const TRUTH: u64 = 1;
    pub const ROW: u64 = 2;
    pub const KMEANS: u64 = 3;
    pub const SGD: u64 = 4;
}

/// Deterministic counter-based stream: draw `i` is `mix64(key + i*GOLDEN)`.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, labels: &[u64]) -> Self {
        let mut key = mix64(seed ^ GOLDEN);
        for &l in labels {
            key = mix64(key ^ mix64(l.wrapping_add(GOLDEN)));
        }
        Stream { key, counter: 0 }
    }

    /// Child stream keyed by one more label; the parent is not advanced.
    pub fn derive(&self, label: u64) -> Stream {
        Stream {
            key: mix64(self.key ^ mix64(label.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n) via 128-bit multiply-shift.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard Box-Muller, cosine branch only; consumes two draws.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        mean + sd * r * (std::f64::consts::TAU * u2).cos()
    }

    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo > 0.0 && hi >= lo);
        self.uniform_in(lo.ln(), hi.ln()).exp()
    }

    /// Index drawn proportionally to `weights` (need not be normalized).
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            target -= w;
            if target < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Fisher-Yates shuffle of `0..n`, used by SGD epoch ordering.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i as u64 + 1) as usize;
            idx.swap(i, j);
        }
        idx
    }
}
