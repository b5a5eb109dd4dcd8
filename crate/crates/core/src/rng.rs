//! Reproducible random streams.
//!
//! Every replicate draws from its own ChaCha stream. The 256-bit key is
//! expanded from `(master_seed, tag)` with SplitMix64 and the 64-bit stream id
//! is the replicate index, so replicate `i` sees the same numbers no matter
//! which thread runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Branch;

/// Counter-based generator used for all sampling in this crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream `index` under the key derived from `(master_seed, tag)`.
pub fn stream(master_seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut state = master_seed ^ tag.rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Stream for replicate `index` of `branch`.
pub fn replicate_rng(master_seed: u64, branch: Branch, index: usize) -> StreamRng {
    stream(master_seed, branch.tag(), index as u64)
}
