//! Counter-addressable Gaussian streams.
//!
//! Every normal draw is a pure function of `(seed, stream, step, axis)`: streams
//! are ChaCha8 streams (stream 0 is the common noise, stream `i + 1` belongs to
//! particle `i`) and each draw consumes exactly four 32-bit words, so any draw can
//! be replayed by seeking without generating the ones before it.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const WORDS_PER_DRAW: u128 = 4;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Stream index of the common noise.
pub const COMMON_STREAM: u64 = 0;

/// Stream index used by particle `i`.
#[inline]
pub fn particle_stream(i: usize) -> u64 {
    i as u64 + 1
}

#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    width: usize,
}

impl NormalStream {
    /// A stream yielding `width` normals per step, positioned at step 0.
    pub fn new(seed: u64, stream: u64, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, width }
    }

    /// Positions the stream so the next draw is `(step, axis = 0)`.
    pub fn seek(&mut self, step: usize) {
        self.rng
            .set_word_pos(step as u128 * self.width as u128 * WORDS_PER_DRAW);
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0);
        (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
    }

    /// Fills `out` with the next `width` draws scaled by `scale`.
    #[inline]
    pub fn fill_step(&mut self, scale: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.width);
        for v in out.iter_mut() {
            *v = scale * self.standard_normal();
        }
    }
}

/// One increment block, addressed directly.
pub fn increment_at(seed: u64, stream: u64, width: usize, step: usize, scale: f64, out: &mut [f64]) {
    let mut s = NormalStream::new(seed, stream, width);
    s.seek(step);
    s.fill_step(scale, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seek_replays_sequential_draws() {
        let mut seq = NormalStream::new(7, 3, 2);
        let mut buf = [0.0; 2];
        let mut history = Vec::new();
        for _ in 0..50 {
            seq.fill_step(0.5, &mut buf);
            history.push(buf);
        }
        for (step, expected) in history.iter().enumerate().rev() {
            let mut out = [0.0; 2];
            increment_at(7, 3, 2, step, 0.5, &mut out);
            assert_eq!(&out, expected);
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = NormalStream::new(1, 1, 1);
        let mut b = NormalStream::new(1, 2, 1);
        assert_ne!(a.standard_normal(), b.standard_normal());
    }

    #[test]
    fn moments_are_standard() {
        let mut s = NormalStream::new(11, 0, 1);
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let z = s.standard_normal();
            m1 += z;
            m2 += z * z;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 5.0 / (n as f64).sqrt());
        assert!((m2 - 1.0).abs() < 0.02);
    }
}
