//! Deterministic seed derivation.
//!
//! All randomness in the simulator flows through explicit seeds. Derived
//! streams (per round, per client, per cluster) are obtained by mixing the
//! base seed with tags through splitmix64, so the draw for one entity never
//! depends on iteration order elsewhere.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a base seed with two tags into an independent stream seed.
pub fn derive(base: u64, tag_a: u64, tag_b: u64) -> u64 {
    splitmix64(splitmix64(base ^ splitmix64(tag_a)) ^ splitmix64(tag_b.wrapping_add(0x51ed2701)))
}
