//! Counter-derived RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by the
//! user seed and a `(purpose, iteration, index)` counter, so any single chain
//! or sample can be regenerated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PURPOSE_DISCRETE: u64 = 1;
pub const PURPOSE_LANGEVIN: u64 = 2;
pub const PURPOSE_REFERENCE: u64 = 3;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, purpose: u64, iteration: u64, index: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ purpose);
    h = splitmix64(h ^ iteration);
    splitmix64(h ^ index)
}

pub fn stream(seed: u64, purpose: u64, iteration: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, purpose, iteration, index))
}
