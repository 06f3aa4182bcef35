//! Seeded random streams.
//!
//! Every draw is keyed by `(seed, stream, block)`: the seed picks the ChaCha key,
//! the stream is the replication index and the block (usually a column index)
//! selects a disjoint window of the keystream. Results therefore never depend on
//! which thread produced them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per block. A column of a 10^4-dimensional t sample uses far fewer.
const BLOCK_WORDS: u128 = 1 << 40;

pub fn stream(seed: u64, stream: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(block as u128 * BLOCK_WORDS);
    rng
}

/// Stream ids at or above this value are reserved for auxiliary draws
/// (Wigner matrices, provider averaging) so they never collide with replications.
pub const AUX_STREAM_BASE: u64 = 1 << 62;
