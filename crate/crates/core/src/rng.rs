//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator addressed by
//! `(seed, domain, id, counter)`. The seed picks the key, the domain and id
//! pick the ChaCha stream, and the counter picks a disjoint window of the
//! keystream. Draws therefore depend only on their address, never on the
//! order in which particles or threads are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct domains never share keystream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Domain {
    Dataset = 1,
    Sampler = 2,
    Init = 3,
    Noise = 4,
    Verify = 5,
}

/// Words of keystream reserved for each counter value (2^36).
const WINDOW_BITS: u32 = 36;

pub fn stream(seed: u64, domain: Domain, id: u64, counter: u64) -> ChaCha8Rng {
    debug_assert!(id < 1 << 56, "stream id overflows into the domain tag");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 56) | id);
    rng.set_word_pos((counter as u128) << WINDOW_BITS);
    rng
}

/// Derives an independent run seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
