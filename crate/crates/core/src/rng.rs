//! Seed derivation so each component draws from its own stream.
//!
//! Streams are keyed by a base seed and a tag, so adding or removing a
//! component never shifts the random numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Mixes `base` with an FNV-1a hash of `tag` through a splitmix64 finalizer.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = base ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_for(base: u64, tag: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}
