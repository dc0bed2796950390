//! Seed derivation.
//!
//! Every random stream is keyed by `(base_seed, tag, index)`:
//!
//! ```text
//! h    = fnv1a64(tag)
//! seed = splitmix64(splitmix64(base_seed ^ h) ^ index)
//! ```
//!
//! where `splitmix64` is the SplitMix64 output finalizer. Streams for
//! different replicates or rungs never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a64(tag.as_bytes())) ^ index)
}

pub fn rng_for(base: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tag, index))
}
