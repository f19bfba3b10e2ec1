//! Seeded pseudo-random source.
//!
//! SplitMix64 is used because it is tiny, fully specified by integer
//! arithmetic, and trivially portable, so draw sequences can be checked
//! against test vectors from other implementations. Bounded draws use
//! plain rejection sampling on `next_u64`, and index sampling is a partial
//! Fisher-Yates shuffle; both are fixed algorithms, not library behaviour.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    state: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed }
    }

    /// Independent stream for `(seed, stream)`, e.g. one per class.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        Self::new(mix64(seed ^ mix64(stream.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, n)`. `n` must be positive.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let limit = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }
}

/// `q` distinct indices from `0..n`, in draw order.
pub fn sample_without_replacement(rng: &mut RngState, n: usize, q: usize) -> Result<Vec<usize>> {
    if q > n {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {q} distinct indices from a population of {n}"
        )));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..q {
        let j = i + rng.next_below((n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(q);
    Ok(pool)
}
