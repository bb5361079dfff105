//! Stateless Gaussian increments keyed by `(seed, path, step, channel)`.
//!
//! Each path owns a ChaCha8 stream; each step owns a fixed block of words in
//! that stream, so any increment can be regenerated without replaying the
//! path and results do not depend on evaluation order.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Standard normal increments for a fixed number of channels.
#[derive(Debug, Clone)]
pub struct NormalStream {
    base: ChaCha8Rng,
    seed: u64,
    channels: usize,
    words_per_step: u128,
}

impl NormalStream {
    pub fn new(seed: u64, channels: usize) -> Self {
        // one Box–Muller pair consumes two u64 = four 32-bit words
        let pairs = channels.div_ceil(2) as u128;
        NormalStream { base: ChaCha8Rng::seed_from_u64(seed), seed, channels, words_per_step: pairs * 4 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn positioned(&self, path: u64, step: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(path);
        rng.set_word_pos(step as u128 * self.words_per_step);
        rng
    }

    /// Fills `out` (length `channels`) with the increments of `(path, step)`.
    pub fn fill(&self, path: u64, step: u64, out: &mut [f64]) {
        let mut rng = self.positioned(path, step);
        fill_from(&mut rng, out);
    }

    pub fn normal(&self, path: u64, step: u64, channel: usize) -> f64 {
        assert!(channel < self.channels, "channel {channel} out of range");
        let mut buf = vec![0.0; self.channels];
        self.fill(path, step, &mut buf);
        buf[channel]
    }

    /// Sequential reader for one path starting at step 0; yields the same
    /// numbers as keyed access.
    pub fn path(&self, path: u64) -> PathNoise {
        PathNoise { rng: self.positioned(path, 0) }
    }
}

/// Step-by-step reader over one path's increments.
#[derive(Debug, Clone)]
pub struct PathNoise {
    rng: ChaCha8Rng,
}

impl PathNoise {
    pub fn next_step(&mut self, out: &mut [f64]) {
        fill_from(&mut self.rng, out);
    }
}

fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    // (0, 1]: never zero, so the logarithm below is finite
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn fill_from(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        let u1 = uniform_open(rng);
        let u2 = uniform_open(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        out[i] = r * theta.cos();
        if i + 1 < out.len() {
            out[i + 1] = r * theta.sin();
        }
        i += 2;
    }
}
