//! Deterministic random numbers.
//!
//! Two flavours live here. [`mix`] and the `unit_*` helpers form a stateless
//! counter-based generator: a draw is a pure function of the key parts, so the
//! engine can evaluate cell `(step, row, col)` on any thread and still produce
//! the same mask. [`StreamRng`] is a small splitmix64 stream for sequential
//! uses (weight init, batch sampling, subsampling).

/// Domain separation constants so independent consumers of the same seed
/// cannot collide.
pub mod stream {
    pub const FIRE: u64 = 0xF19E;
    pub const JITTER: u64 = 0x717E2;
    pub const SUBSAMPLE: u64 = 0x5AB5;
    pub const INIT: u64 = 0x1217;
    pub const BATCH: u64 = 0xBA7C;
    pub const STEPS: u64 = 0x57E5;
    pub const SIGNAL: u64 = 0x516;
    pub const FIELD: u64 = 0xF1E1D;
    pub const PCA_START: u64 = 0x9CA;
    pub const STAGE: u64 = 0x57A6E;
    pub const DATA: u64 = 0xDA7A;
}

#[inline(always)]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Hash an arbitrary key tuple down to one well-mixed `u64`.
#[inline]
pub fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9E3779B97F4A7C15u64;
    for &p in parts {
        h = finalize(h ^ p.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(0x632BE59BD9B4E019));
        h = h.wrapping_add(0x9E3779B97F4A7C15);
    }
    finalize(h)
}

/// Uniform draw in `[0, 1)` keyed on the given parts.
#[inline]
pub fn unit_f64(parts: &[u64]) -> f64 {
    (mix(parts) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, n)` keyed on the given parts. `n` must be > 0.
#[inline]
pub fn uniform_index(parts: &[u64], n: usize) -> usize {
    debug_assert!(n > 0);
    (mix(parts) % n as u64) as usize
}

/// Sequential splitmix64 stream.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    pub fn new(seed: u64, domain: u64) -> Self {
        StreamRng {
            state: mix(&[seed, domain]),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        finalize(self.state)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be > 0.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// Standard normal via Box-Muller.
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.unit_f64();
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        r * (std::f64::consts::TAU * u2).cos()
    }

    /// Choose `m` distinct indices out of `n` (order irrelevant but deterministic).
    pub fn choose_indices(&mut self, n: usize, m: usize) -> Vec<usize> {
        debug_assert!(m <= n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(m);
        idx
    }
}
