//! Deterministic, splittable random streams.
//!
//! A stream is ChaCha20 keyed by the seed with the 64-bit ChaCha stream
//! selector set to `stream_id`, so each (seed, stream) pair is an
//! independent counter-mode keystream. Normal draws go through the inverse
//! CDF, which makes the same stream usable at either precision.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::special;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    draws: u64,
    inner: ChaCha20Rng,
}

/// Shorthand for [`RngStream::new`].
pub fn make_rng(seed: u64, stream_id: u64) -> RngStream {
    RngStream::new(seed, stream_id)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            draws: 0,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 64-bit words consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        let bits = self.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        special::normal_quantile(self.uniform())
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift, bias < 2^-64·n).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = make_rng(7, 0);
        let mut b = make_rng(7, 0);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        assert_eq!(a.draws(), 100);
    }

    #[test]
    fn streams_differ_at_first_draw() {
        let mut a = make_rng(7, 0);
        let mut b = make_rng(7, 1);
        assert_ne!(a.normal(), b.normal());
        let mut c = make_rng(8, 0);
        assert_ne!(make_rng(7, 0).uniform(), c.uniform());
    }

    #[test]
    fn normal_mean_and_variance() {
        let mut r = make_rng(1, 3);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = r.normal();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut r = make_rng(0, 0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
        for _ in 0..1000 {
            assert!(r.index(3) < 3);
        }
    }
}
