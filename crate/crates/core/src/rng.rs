//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream derived from a root
//! seed and a tuple of stream labels, so parallel workers never share state
//! and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Root RNG for a seed.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, labels...)`.
pub fn stream(seed: u64, labels: &[u64]) -> Rng {
    let mut h = splitmix(seed ^ 0x6a09_e667_f3bc_c908);
    for &l in labels {
        h = splitmix(h ^ l.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
