//! Counter-based seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! pure function of `(run seed, stream tag, index)`. Workers that own disjoint
//! indices therefore produce the same numbers regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated consumers of one run seed apart.
pub mod stream {
    pub const EPISODE: u64 = 0x45_50_49_53;
    pub const GENERATIVE: u64 = 0x47_45_4e_51;
    pub const TRIAL: u64 = 0x54_52_49_41;
    pub const PACK: u64 = 0x50_41_43_4b;
    pub const MONTE_CARLO: u64 = 0x4d_43_41_52;
    pub const LEARNER: u64 = 0x4c_45_41_52;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index into a fresh 64-bit seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(base ^ 0x6A09_E667_F3BC_C908);
    let b = splitmix64(a ^ stream.rotate_left(17));
    splitmix64(b ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn derived_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
