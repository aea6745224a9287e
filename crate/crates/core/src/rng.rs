//! Seeded randomness with named streams.
//!
//! Every randomized stage draws from its own `(seed, stream)` pair so that
//! changing, say, the detector's sampling never perturbs critic
//! initialization or batch order. Identical `(seed, stream)` pairs always
//! yield identical draw sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::real::Real;

/// Stream ids, one per randomized stage.
pub mod streams {
    pub const CRITIC_INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const DETECTOR: u64 = 3;
    pub const MARK_GEN: u64 = 4;
    pub const MANIP_SELECT: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const DATA_GEN: u64 = 8;
}

/// Counter-style seeded generator; single-owner, never shared mutably.
#[derive(Debug, Clone)]
pub struct SeedStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl SeedStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform<T: Real>(&mut self) -> T {
        T::from_f64_lossy(self.rng.gen::<f64>())
    }

    /// Standard normal draw (Box-Muller; uncached so state stays minimal).
    pub fn normal<T: Real>(&mut self) -> T {
        let u1: f64 = self.rng.gen::<f64>().max(1e-300);
        let u2: f64 = self.rng.gen();
        T::from_f64_lossy((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos())
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.rng.gen_range(0..n)
    }

    pub fn shuffle<X>(&mut self, xs: &mut [X]) {
        // Fisher-Yates
        for i in (1..xs.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            xs.swap(i, j);
        }
    }

    /// `k` distinct elements sampled uniformly from `pool` (partial
    /// Fisher-Yates); panics if `k > pool.len()`.
    pub fn sample_without_replacement(&mut self, pool: &[usize], k: usize) -> Vec<usize> {
        assert!(k <= pool.len(), "sample larger than pool");
        let mut work = pool.to_vec();
        for i in 0..k {
            let j = self.rng.gen_range(i..work.len());
            work.swap(i, j);
        }
        work.truncate(k);
        work
    }
}
