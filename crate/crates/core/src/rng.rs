//! Seeded randomness.
//!
//! Every random draw in the crate comes from `xoshiro256**`, seeded via
//! `SplitMix64` expansion of a 64-bit seed (the `rand_core`
//! `seed_from_u64` construction). A root seed is split into independent
//! per-purpose streams with [`derive_seed`], so changing e.g. the split
//! fractions never perturbs model initialization.
//!
//! Derived helpers are fixed so other implementations can reproduce them:
//!
//! * `unit_f64`: `(next_u64() >> 11) * 2^-53`, a uniform draw on `[0, 1)`.
//! * `below(n)`: `(next_u64() as u128 * n) >> 64` (multiply-shift, no rejection).
//! * `shuffle`: Fisher-Yates from the back, `j = below(i + 1)` for `i = n-1 .. 1`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// Independent purposes a root seed is expanded into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Shuffle = 3,
    Synth = 4,
    Noise = 5,
    GradCheck = 6,
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// `splitmix64(root ^ (stream * 0x9E3779B97F4A7C15))`.
pub fn derive_seed(root: u64, stream: Stream) -> u64 {
    let mut z = root ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(root: u64, stream: Stream) -> Rng {
    seeded(derive_seed(root, stream))
}

pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

pub fn below<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

pub fn shuffle<T, R: RngCore + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}
