//! Deterministic random number generation.
//!
//! A counter-based splitmix64 generator: the n-th output is a pure function
//! of `(seed, counter)`, so identical seeds and identical call sequences
//! yield identical streams on every platform. `split` derives an independent
//! stream, which keeps weight initialization, shuffling and data synthesis
//! decoupled from each other.

use serde::{Deserialize, Serialize};

/// Identifier of the fixed generator algorithm, stored in checkpoints.
pub const RNG_ALGORITHM: &str = "splitmix64";

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Counter-based splitmix64 state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Restore a state captured by `seed()`/`counter()`.
    pub fn restore(seed: u64, counter: u64) -> Self {
        RngState { seed, counter }
    }

    /// Next raw 64-bit value.
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let mut z = self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        // 53 high bits -> uniform double
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let mut u = self.next_f64();
        if u <= 0.0 {
            u = f64::MIN_POSITIVE;
        }
        let v = self.next_f64();
        let r = libm::sqrt(-2.0 * libm::log(u));
        r * libm::cos(2.0 * core::f64::consts::PI * v)
    }

    /// Derive an independent generator; advances this stream by one draw.
    pub fn split(&mut self) -> RngState {
        RngState::new(self.next_u64() ^ GAMMA)
    }

    /// Fisher-Yates shuffle with draws from this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
