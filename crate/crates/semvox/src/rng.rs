//! Seedable, portable randomness.
//!
//! Every randomized operation in this crate draws from a [`ChaCha8Rng`]
//! seeded through the helpers here, so a run is a pure function of its
//! seeds. The generator and the derivation scheme are pinned so that
//! assignments reproduce bit-for-bit across platforms and can be
//! re-implemented in other languages:
//!
//! * generator: ChaCha with 8 rounds, seeded via `seed_from_u64`
//! * sub-seed derivation: SplitMix64 absorption (see [`derive_seed`])
//! * bounded integers: modulo rejection on raw `u64` draws
//! * unit floats: top 53 bits of a `u64` scaled by 2^-53

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// One SplitMix64 step (Steele, Lea & Flood's constants).
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from a root seed and a tag path.
///
/// Each tag is absorbed as `state = splitmix64(state ^ splitmix64(tag))`,
/// so distinct tag paths yield decorrelated streams. This is how the
/// scene-generation, model-init, and masking streams are split from one
/// root seed: varying one factor never perturbs the others.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(root);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    state
}

/// ChaCha8 generator for a derived stream.
pub fn rng_for(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tags))
}

/// Uniform integer in `0..bound` by modulo rejection (unbiased).
///
/// Draws below `2^64 mod bound` are rejected; every residue then occurs
/// exactly `floor(2^64 / bound)` times over the accepted range.
pub fn uniform_below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below: bound must be positive");
    let threshold = bound.wrapping_neg() % bound; // 2^64 mod bound
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// Uniform f64 in `[0, 1)` from the top 53 bits of one draw.
pub fn uniform_unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform f64 in `[lo, hi)`.
pub fn uniform_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform_unit(rng)
}

/// Draws `k` distinct indices from `0..n`, uniformly without replacement,
/// by a partial Fisher-Yates shuffle. The result order is the draw order.
pub fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct items from {n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
