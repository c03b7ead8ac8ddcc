//! Deterministic random streams.
//!
//! Everything stochastic in this crate draws from [`Stream`], a thin wrapper
//! over ChaCha8 that exposes exactly the primitives we need with fixed
//! sampling algorithms. Keeping the sampling math in one place guarantees that
//! generated datasets, parameter initializations, and training shuffles are
//! reproducible bit-for-bit from a seed, independent of upstream crate
//! implementation details.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Derive an independent seed from a base seed, a domain tag, and an index.
/// Splitmix64 finalizer; distinct (tag, index) pairs give unrelated seeds.
pub fn mix_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded random stream. `(seed, stream_id)` fully determines the sequence.
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream: same seed, different ChaCha stream id.
    pub fn substream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform index in [0, n). Rejection-sampled so every index is equally
    /// likely.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index() over empty range");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Bernoulli draw with success probability `p`.
    pub fn flip(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call and
    /// discards the second variate; simplicity beats saving one draw here.
    pub fn normal(&mut self) -> f64 {
        let u1 = loop {
            let u = self.unit();
            if u > 0.0 {
                break u;
            }
        };
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, v: &mut [T]) {
        for i in (1..v.len()).rev() {
            let j = self.index(i + 1);
            v.swap(i, j);
        }
    }

    /// `k` distinct indices from [0, n), in draw order.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct from {n}");
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let cand = self.index(n);
            if !picked.contains(&cand) {
                picked.push(cand);
            }
        }
        picked
    }
}
