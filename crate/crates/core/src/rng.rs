//! Counter-based pseudo-random generator.
//!
//! Query batches must be reproducible bit-for-bit across platforms and
//! across parallel execution orders, so instead of a stateful stream we
//! use a pure function of `(key, counter)`: the SplitMix64 finalizer
//! applied to `key + (counter + 1) * GAMMA`. Any draw can be computed
//! independently of any other, which makes per-table generation
//! trivially parallel with sequential-identical output.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent stream key from a seed and a stream id.
#[inline]
pub fn derive_key(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_mul(GAMMA) ^ 0x5851_f42d_4c95_7f2d))
}

/// The `i`-th draw of the stream identified by `key`.
#[inline]
pub fn value_at(key: u64, i: u64) -> u64 {
    mix64(key.wrapping_add(i.wrapping_add(1).wrapping_mul(GAMMA)))
}

/// Sequential view over one stream.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { key: derive_key(seed, stream), counter: 0 }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = value_at(self.key, self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[0, bound)` via the multiply-shift reduction.
    /// Bias is at most `bound / 2^64`, negligible for table-sized bounds.
    pub fn next_index(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }
}
