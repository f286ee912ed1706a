//! Keyed random streams.
//!
//! Every draw in a run comes from a ChaCha8 stream addressed by
//! `(master seed, purpose, trajectory, step)`, so results do not depend on
//! which worker ran which trajectory or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Different purposes never share key material.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Measure = 1,
    Noise = 2,
    Shots = 3,
    JumpMc = 4,
    Test = 5,
}

/// Words reserved per `(trajectory, step)` cell.
const STEP_WORDS_LOG2: u32 = 36;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one `(trajectory, step)` cell of a purpose.
pub fn stream(master_seed: u64, purpose: Purpose, trajectory: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = master_seed ^ splitmix(purpose as u64);
    for chunk in key.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trajectory);
    rng.set_word_pos((step as u128) << STEP_WORDS_LOG2);
    rng
}
