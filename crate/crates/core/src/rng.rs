//! Seeded random streams.
//!
//! Every stochastic operation draws from a ChaCha8 generator (a counter-based
//! stream cipher) keyed by an explicit 64-bit seed. Independent consumers get
//! independent streams of the same key so that adding a consumer never shifts
//! the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream identifiers. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Regressor = 4,
    Split = 5,
    Pools = 6,
    Clips = 7,
    Playback = 8,
}

/// Generator for `seed` on the given stream.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Generator for one item (clip, file) inside a stream. Items of the same
/// stream never share a key, whatever order they are produced in.
pub fn item_stream(seed: u64, stream: Stream, item: u64) -> Rng {
    let key = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(item.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        ^ (stream as u64) << 56;
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(item);
    rng
}
