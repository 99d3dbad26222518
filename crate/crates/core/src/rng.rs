//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] seeded through
//! [`derive_seed`], so a single master seed fans out into independent,
//! individually reproducible streams.
//!
//! Seed derivation: the stream tag is hashed with FNV-1a (64 bit), combined
//! with the master seed and index, and passed through two rounds of the
//! SplitMix64 finalizer.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Child seed for the `index`-th member of the stream named `tag`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(tag)).wrapping_add(index))
}

pub fn stream(master: u64, tag: &str, index: u64) -> Rng {
    seeded(derive_seed(master, tag, index))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Laplace(0, scale) by inverse CDF. A zero scale yields exactly zero.
pub fn laplace(rng: &mut Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let tail = 1.0 - 2.0 * u.abs();
        if tail > 0.0 {
            return -scale * u.signum() * tail.ln();
        }
    }
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
