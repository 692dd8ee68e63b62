//! Reproducible per-repetition random streams.
//!
//! Repetition `i` of a run with master seed `s` draws from the ChaCha8
//! keystream with key expanded from `s` and stream id `i`. ChaCha is a
//! counter-mode generator, so each stream is an independent, directly
//! addressable sequence and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn derive_stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}
