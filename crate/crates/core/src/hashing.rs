//! Stable 64-bit hashing used for feature buckets, derived seeds and model
//! fingerprints. FNV-1a is fixed across platforms and compiler versions,
//! which keeps persisted models valid.

use std::hash::Hasher;

use fnv::FnvHasher;

pub fn hash_str(s: &str) -> u64 {
    hash_bytes(s.as_bytes())
}

pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Mixes a seed with a stream index. The finaliser spreads nearby inputs so
/// consecutive indices give unrelated RNG streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(&index.to_le_bytes());
    splitmix(h.finish())
}

pub fn derive_seed_str(seed: u64, label: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(label.as_bytes());
    splitmix(h.finish())
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
