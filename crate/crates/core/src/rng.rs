//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha with 8 rounds
//! (`rand_chacha` 0.3), keyed by `seed_from_u64(seed)` and split into
//! independent streams with `set_stream`. Uniform reals use `rand` 0.8's
//! `Standard` distribution for `f64` (53 random mantissa bits, `[0, 1)`).
//! Both algorithms are portable, so a `(seed, stream)` pair yields the same
//! numbers on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Version tag of the generator recipe above; bump if it ever changes.
pub const RNG_VERSION: &str = "chacha8-rand0.8-v1";

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// SplitMix64 finalizer; used to derive child seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, salt: u64) -> u64 {
    mix(seed ^ mix(salt))
}
