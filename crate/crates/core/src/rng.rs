//! Deterministic random streams.
//!
//! Every stochastic piece of work (one repetition of one experiment cell, one
//! Stage II sample batch, ...) gets its own generator whose seed is a pure
//! function of a base seed and a list of integer keys. Results therefore do not
//! depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of keys into a single 64-bit seed.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// A generator keyed by `(base, keys...)`.
pub fn stream(base: u64, keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, keys))
}

/// Stable numeric key for a string tag (FNV-1a).
pub fn tag_key(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}
