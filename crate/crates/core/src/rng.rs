//! Deterministic random source shared by splits, parameter initialisation,
//! dropout and the synthetic generator.
//!
//! Everything is derived from xoshiro256** seeded through SplitMix64 (the
//! reference `seed_from_u64` expansion), so another implementation can
//! reproduce splits and initial weights bit for bit:
//!
//! - `uniform()`: `(next_u64() >> 11) * 2^-53`, a value in `[0, 1)`.
//! - `below(n)`: multiply-shift, `(next_u64() as u128 * n as u128) >> 64`.
//! - `normal()`: Box-Muller, cosine branch only:
//!   `sqrt(-2 ln(1 - u1)) * cos(2π u2)` with two consecutive `uniform()` draws.
//! - `shuffle()`: Fisher-Yates from the back, swapping `i` with `below(i + 1)`.
//! - `Rng::stream(seed, id)`: an independent generator seeded with
//!   `seed ^ (id * 0x9E3779B97F4A7C15)` (wrapping).

use rand_core::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

const STREAM_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Generator for a named sub-stream of `seed`.
    pub fn stream(seed: u64, id: u64) -> Self {
        Self::new(seed ^ id.wrapping_mul(STREAM_MIX))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
