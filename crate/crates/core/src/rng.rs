//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream keyed by
//! `(seed, stream index)`. Work that is split into fixed-size chunks gives
//! each chunk its own stream, so results do not depend on how many threads
//! process the chunks.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Number of draws handled by one RNG stream in chunked sampling.
pub const CHUNK_SIZE: usize = 256;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives an independent child seed, e.g. one per experiment row or per
/// designer iteration.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // Offset keeps derived seeds off the streams used for chunked sampling.
    stream(seed, index.wrapping_add(1 << 62)).next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, 0).random();
        let b: u64 = stream(7, 0).random();
        let c: u64 = stream(7, 1).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
    }
}
