//! Keyed random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a root
//! seed plus a path of integer keys, e.g. `(seed, session, token)`. Streams
//! never depend on the order in which other streams were drawn, which keeps
//! parallel work reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags for subseed derivation. Distinct tags give independent streams.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const SAMPLER: u64 = 0x2;
    pub const AUGMENT: u64 = 0x3;
    pub const RANK_PAIRS: u64 = 0x4;
    pub const BOOTSTRAP: u64 = 0x5;
    pub const PERMUTATION: u64 = 0x6;
    pub const SYNTH_NOISE: u64 = 0x10;
    pub const SYNTH_LAYOUT: u64 = 0x11;
    pub const SYNTH_PATTERN: u64 = 0x12;
    pub const SUBSAMPLE: u64 = 0x20;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a root seed with a key path into a single 64-bit subseed.
pub fn subseed(seed: u64, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x6D65_676B_7773_0001);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// A ChaCha8 stream keyed by `(seed, keys...)`.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    let mut h = subseed(seed, keys);
    for chunk in bytes.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
