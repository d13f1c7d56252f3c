//! Counter-based random number generation.
//!
//! Every random value is a pure function of `(seed, stream, round, row, col)`,
//! so generation order, chunking and thread count cannot change the result.
//! Sketching matrices drawn in several adaptive rounds are therefore identical
//! to the columns a single larger draw would have produced.

/// Independent stream identifiers. Values are part of the on-disk/reproducibility
/// contract: changing them changes every sketch.
pub mod stream {
    pub const OMEGA: u64 = 1;
    pub const POINTS: u64 = 2;
    pub const POWER: u64 = 3;
    pub const LOW_RANK: u64 = 4;
    pub const TEST: u64 = 9;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn hash(seed: u64, stream: u64, round: u64, row: u64, col: u64, sub: u64) -> u64 {
    let mut h = mix(seed ^ GOLDEN);
    h = mix(h ^ stream.wrapping_mul(GOLDEN));
    h = mix(h ^ round.wrapping_mul(GOLDEN));
    h = mix(h ^ row.wrapping_mul(GOLDEN));
    h = mix(h ^ col.wrapping_mul(GOLDEN));
    h = mix(h ^ sub.wrapping_mul(GOLDEN));
    h
}

/// Uniform in [0, 1), 53-bit resolution.
#[inline]
pub fn uniform(seed: u64, stream: u64, round: u64, row: u64, col: u64) -> f64 {
    (hash(seed, stream, round, row, col, 0) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box-Muller on two keyed uniforms.
#[inline]
pub fn normal(seed: u64, stream: u64, round: u64, row: u64, col: u64) -> f64 {
    // u1 in (0, 1] so the log is finite.
    let u1 = ((hash(seed, stream, round, row, col, 0) >> 11) + 1) as f64
        * (1.0 / (1u64 << 53) as f64);
    let u2 = (hash(seed, stream, round, row, col, 1) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
