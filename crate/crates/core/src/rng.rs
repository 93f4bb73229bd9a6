//! Seedable pseudo-random generator.
//!
//! Everything stochastic in this crate (noise sampling, weight init, data
//! shuffling, synthetic datasets) draws from SplitMix64. The algorithm is
//! fixed so that a given seed produces the same stream on every platform;
//! there is no dependency on an external RNG crate whose output could move
//! between versions.

/// SplitMix64 generator (Steele, Lea & Flood; the java.util.SplittableRandom
/// finalizer). State advances by the golden-ratio increment; output is the
/// murmur-style finalizer of the state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent stream seed from (seed, index), used for
    /// per-epoch shuffles and per-sample noise streams.
    pub fn derive(seed: u64, index: u64) -> u64 {
        let mut r = SplitMix64::new(seed ^ index.wrapping_mul(GOLDEN));
        r.next_u64()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1), 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform strictly inside (-0.5, 0.5). The +0.5 offset keeps both
    /// endpoints unreachable: the closest values are +-(0.5 - 2^-54).
    pub fn next_centered(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64) - 0.5
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(1e-300);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in [0, n) by 128-bit multiply-shift.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}
