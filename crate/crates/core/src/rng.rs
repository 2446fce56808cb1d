//! Deterministic random number generation.
//!
//! All randomness in the crate flows through [`RngState`], a splittable
//! generator built on SplitMix64. A state is seeded once; independent
//! streams are derived from it by name, so the draw order of one component
//! (say, parameter init) can never perturb another (say, dropout masks).
//! Identical seeds produce bit-identical streams on every platform.

/// FNV-1a 64-bit hash; used for stream derivation and config digests.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    mix(*state)
}

/// Root of all randomness: a seed plus the generator name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
}

impl RngState {
    pub const ALGORITHM: &'static str = "splitmix64";

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Derive an independent stream named by `tag`.
    pub fn stream(&self, tag: &str) -> RngStream {
        RngStream {
            state: mix(self.seed ^ fnv1a(tag.as_bytes())),
        }
    }

    /// Derive a stream named by `tag` and an index (per-epoch, per-sample...).
    /// The index is scrambled into the state, so consecutive indices do not
    /// produce overlapping sequences.
    pub fn stream_indexed(&self, tag: &str, index: u64) -> RngStream {
        let base = self.seed ^ fnv1a(tag.as_bytes());
        RngStream {
            state: mix(base.wrapping_add(mix(index.wrapping_mul(0x9e3779b97f4a7c15)))),
        }
    }
}

/// A single SplitMix64 sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Modulo bias is irrelevant at the ranges used here (n << 2^64).
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via the Marsaglia polar method (no trig, deterministic).
    pub fn gaussian(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
