//! Sub-seed derivation so that per-item randomness does not depend on
//! iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, stable across platforms and compiler versions.
pub(crate) fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub(crate) fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)).wrapping_add(index))
}

pub(crate) fn rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}

/// Stream tags keep the generators used by different modules apart.
pub(crate) mod stream {
    pub const ADMISSION: u64 = 1;
    pub const PATIENTS: u64 = 2;
    pub const FRAMING: u64 = 3;
    pub const FOLDS: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const BACKGROUND: u64 = 6;
    pub const EXPLAIN_ROWS: u64 = 7;
    pub const SEPSIS_DRAW: u64 = 8;
}
