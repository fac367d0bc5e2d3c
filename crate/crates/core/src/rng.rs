//! Pinned deterministic randomness.
//!
//! Every seeded operation in the crate (table perturbation, GRPO sampling,
//! synthetic fixtures) draws from [`DetRng`]: a SplitMix64 generator with
//! 64 bits of state. Sub-streams are derived by mixing the parent seed with
//! a stream label, so two consumers of one seed never share a sequence.
//! Bounded draws use rejection sampling and shuffles use Fisher–Yates, both
//! written out here so the output does not depend on `rand` internals.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Identifier of the generator + derivation scheme. Bump when any of the
/// algorithms below change output for a given seed.
pub const GENERATOR_ID: &str = "splitmix64-fy-v1";

/// Finalizer from SplitMix64, used to derive sub-stream seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over bytes; stable across platforms and Rust versions.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct DetRng {
    inner: SplitMix64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Seed of the sub-stream `label` under `seed`.
    pub fn derive_seed(seed: u64, label: u64) -> u64 {
        mix64(seed ^ mix64(label))
    }

    /// Independent generator for sub-stream `label`.
    pub fn substream(seed: u64, label: u64) -> Self {
        Self::new(Self::derive_seed(seed, label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below(0)");
        // reject the low `2^64 mod bound` values so every residue is equally likely
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// In-place Fisher–Yates shuffle (Durstenfeld, high index downwards).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// A uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// Index drawn from a discrete distribution given by `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.unit_f64();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left a sliver above the cumulative sum
        probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}
