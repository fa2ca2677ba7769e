//! Counter-based splittable random streams: every unit of work (trial,
//! rate, task, purpose) derives its own generator from the global seed, so
//! results do not depend on scheduling or on which other streams were
//! drawn.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent generator from `seed` and a path of stream
/// components (e.g. `[purpose, trial, rate_index, task_index]`).
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ 0x5851_F42D_4C95_7F2D);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p));
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
