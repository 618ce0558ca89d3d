//! Counter-based random streams.
//!
//! Every `(master_seed, worker, round)` triple maps to its own ChaCha8
//! stream, so draws never depend on evaluation order. Worker id `0` is
//! reserved for the adversary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Worker slot used for adversary randomness.
pub const ADVERSARY_SLOT: u64 = 0;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one `(worker, round)` pair.
///
/// The key is expanded from `(master_seed, round)` and the worker id is the
/// ChaCha stream selector, so distinct pairs never share keystream.
pub fn substream(master_seed: u64, worker: u64, round: u64) -> Stream {
    let mut round_state = round;
    let mut state = master_seed ^ splitmix64(&mut round_state);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(worker);
    rng
}

/// Plain stream from a single seed, for one-off draws.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}
