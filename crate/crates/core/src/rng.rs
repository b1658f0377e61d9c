//! Counter-based pseudorandom functions.
//!
//! Every random quantity in the lab is a pure function of a 64-bit key and a
//! short list of 64-bit words (site coordinates, step index, visit count,
//! replica index). The mixer is SplitMix64's finalizer applied once per word:
//!
//! ```text
//! h_0     = splitmix64(key ^ domain)
//! h_{i+1} = splitmix64(h_i ^ splitmix64(w_i ^ WORD_SALT))
//! ```
//!
//! Results therefore do not depend on visit order or on how replicas are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain separators so that site, step, edge and seed streams never share inputs.
pub mod domain {
    pub const SITE: u64 = 0x5349_5445_0000_0001;
    pub const STEP: u64 = 0x5354_4550_0000_0002;
    pub const EDGE: u64 = 0x4544_4745_0000_0003;
    pub const EDGE_RESAMPLED: u64 = 0x4544_4752_0000_0004;
    pub const PERTURB: u64 = 0x5045_5254_0000_0005;
    pub const SEED: u64 = 0x5345_4544_0000_0006;
    pub const HALF_SPACE: u64 = 0x4841_4c46_0000_0007;
}

const WORD_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn hash_words(key: u64, domain: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = splitmix64(key ^ domain);
    for w in words {
        h = splitmix64(h ^ splitmix64(w ^ WORD_SALT));
    }
    h
}

/// Maps 64 random bits to a double in [0, 1) using the top 53 bits.
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives a child seed from a parent seed and a path of tags.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    hash_words(parent, domain::SEED, path.iter().copied())
}

/// A conventional stream RNG for sampling that is not tied to lattice
/// positions (renewal draws, synthetic test data).
pub fn stream_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Index of the first cumulative weight exceeding `u`. The last index absorbs
/// rounding when the cumulative total falls a few ulps short of one.
#[inline]
pub fn pick_cumulative(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}
