//! Counter-based random numbers.
//!
//! The generator is SplitMix64 evaluated at explicit counters: draw `i` of a
//! stream with key `K` is `mix(K + (i + 1) * 0x9E3779B97F4A7C15)` where `mix`
//! is the SplitMix64 finalizer. Streams are derived from a parent key and a
//! 64-bit tag with `mix(key ^ mix(tag))`, so any implementation that follows
//! these two formulas reproduces every split and initialization bit for bit.
//!
//! Derived quantities:
//! - uniform in `[0, 1)`: `(u64 >> 11) * 2^-53`
//! - standard normal: Box-Muller on two consecutive uniforms `u1, u2`,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`; the sine branch is discarded
//! - integer below `n`: `floor(uniform * n)`

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { key: mix64(seed), counter: 0 }
    }

    /// Independent child stream; does not advance `self`.
    pub fn fork(&self, tag: u64) -> Self {
        Self { key: mix64(self.key ^ mix64(tag)), counter: 0 }
    }

    pub fn fork_str(&self, tag: &str) -> Self {
        // FNV-1a over the bytes gives a stable tag for named streams.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        self.fork(h)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Fisher-Yates, iterating from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `count` distinct indices from `0..n`, in sampled order.
    pub fn sample_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let count = count.min(n);
        for i in 0..count {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(count);
        idx
    }
}
