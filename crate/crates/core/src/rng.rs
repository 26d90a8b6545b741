//! Random streams and the fixed sampling transforms used across the crate.
//!
//! Every random draw in the simulator comes from a [`Stream`]: a ChaCha20
//! generator (RFC 8439 block function, 20 rounds) keyed by a 64-bit seed and
//! selected by a 64-bit stream id. The 256-bit key is the seed in
//! little-endian order followed by 24 zero bytes, and the stream id is the
//! ChaCha nonce. Draws consume 64-bit words in keystream order.
//!
//! On top of the raw words the following transforms are fixed, so that any
//! implementation with a ChaCha20 keystream replays the same values:
//!
//! * uniform on (0, 1]: `((w >> 11) + 1) * 2^-53` for one word `w`;
//! * standard normal: Box–Muller on two uniforms `u1, u2`, producing
//!   `sqrt(-2 ln u1) cos(2π u2)` then `sqrt(-2 ln u1) sin(2π u2)`;
//! * exponential with rate `λ`: `-ln(u) / λ`;
//! * geometric number of trials with failure probability `p`:
//!   `max(1, ceil(ln(u) / ln(p)))`, and exactly 1 when `p = 0`.

use std::f64::consts::TAU;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A seeded, splittable random stream.
#[derive(Clone, Debug)]
pub struct Stream {
    inner: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream_id);
        Stream {
            inner,
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw on (0, 1].
    pub fn uniform(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform().ln() / rate
    }

    /// Number of Bernoulli trials up to and including the first success,
    /// where each trial fails with probability `fail_prob`.
    pub fn geometric_trials(&mut self, fail_prob: f64) -> u64 {
        if fail_prob <= 0.0 {
            return 1;
        }
        let k = (self.uniform().ln() / fail_prob.ln()).ceil();
        if k < 1.0 {
            1
        } else {
            k as u64
        }
    }

    /// Uniform integer in `0..n`, by rejection on 64-bit words.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX - n + 1) % n;
        loop {
            let w = self.inner.next_u64();
            if w <= zone {
                return w % n;
            }
        }
    }

    /// Fisher–Yates shuffle driven by [`Stream::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, uniformly at random, in ascending
    /// order (partial Fisher–Yates, then sorted).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}
