//! Stable seed derivation.
//!
//! Child seeds are `master XOR h(parts)` where `h` folds each part through
//! SplitMix64. The scheme is fixed so reports reproduce across machines and
//! toolchains (no dependence on `std`'s hasher).

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn hash_parts(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn derive(master: u64, parts: &[u64]) -> u64 {
    master ^ hash_parts(parts)
}

/// Domain tags keep unrelated streams apart.
pub mod tag {
    pub const SUBSET: u64 = 1;
    pub const PRETRAIN: u64 = 2;
    pub const PROTOCOL: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const EPOCH: u64 = 6;
    pub const LOCATION: u64 = 7;
    pub const CLASS: u64 = 8;
}
