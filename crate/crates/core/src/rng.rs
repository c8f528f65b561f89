//! Seeded random streams. Every stochastic step in the pipeline draws from a
//! `ChaCha8Rng` derived from the run seed, so runs replay bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for a named sub-task, so adding draws in one place
/// does not shift the randomness of another.
pub fn derive(seed: u64, stream: &str) -> Rng {
    // FNV-1a over the stream label, mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seeded(seed ^ h.rotate_left(17))
}
