//! Seeded random streams.
//!
//! All randomness in the crate flows from one master seed. Independent
//! streams are derived by mixing the master seed with a purpose tag
//! (FNV-1a over the tag bytes, then splitmix64), so e.g. the data stream
//! and the parameter-init stream of a run never overlap and every stream
//! is reproducible in isolation.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of a named stream from the master seed.
pub fn stream_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(tag.as_bytes())))
}

/// A named, reproducible random stream.
pub fn stream(master: u64, tag: &str) -> Rng {
    Rng::seed_from_u64(stream_seed(master, tag))
}

pub type Rng = ChaCha12Rng;

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn uniform(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform_in(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Standard normal draw (Box-Muller, pinned here so streams stay
/// bit-identical regardless of upstream crate changes).
pub fn normal(rng: &mut Rng) -> f64 {
    // u1 in (0, 1] to keep the log finite.
    let u1 = 1.0 - uniform(rng);
    let u2 = uniform(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform index in `[0, n)` via 128-bit multiply (unbiased enough for
/// n far below 2^64; exact rejection is not needed at these sizes).
pub fn index(rng: &mut Rng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Sample an index from unnormalized nonnegative weights.
pub fn categorical(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = uniform(rng) * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
