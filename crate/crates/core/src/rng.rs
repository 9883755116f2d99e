//! Keyed random streams.
//!
//! A [`StreamKey`] is a 64-bit digest of a path such as
//! `(seed, layer, role, row)`. Each key seeds an independent ChaCha8 stream,
//! so a draw depends only on its key and its position in the stream, never on
//! how many other streams were consumed before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed))
    }

    /// Derives the key of a sub-stream.
    pub fn child(self, index: u64) -> Self {
        Self(splitmix64(
            self.0 ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)),
        ))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
