//! Seed-reproducible random number generation.
//!
//! The generator is a fixed-constant ChaCha8 stream, so identical seeds
//! produce identical draw sequences on every platform. Floating-point draws
//! are derived from the integer stream with explicit bit arithmetic rather
//! than distribution adapters, which pins the exact values to this crate.
//! One generator per thread of work; the type is deliberately not `Clone`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::mat::Mat;

/// Deterministic random source seeded by a 64-bit integer.
#[derive(Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw via Box-Muller (consumes two uniform draws).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Matrix with i.i.d. uniform entries in `[lo, hi)`, drawn row-major.
    pub fn uniform_mat(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
        Mat::from_fn(rows, cols, |_, _| self.uniform(lo, hi)).expect("uniform draws are finite")
    }

    /// Matrix with i.i.d. standard normal entries, drawn row-major.
    pub fn normal_mat(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| self.normal()).expect("normal draws are finite")
    }
}
