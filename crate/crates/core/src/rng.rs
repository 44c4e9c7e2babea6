//! Seeding conventions.
//!
//! Every random stream is a ChaCha8 generator (`rand_chacha`) created with
//! `seed_from_u64`. Per-row streams inside a sweep are keyed by
//! `(seed, iteration, step, row)` through a SplitMix64 mix, so draws do not
//! depend on how rows are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for one row of one step of one iteration.
pub fn substream(seed: u64, iteration: u64, step: u64, row: u64) -> SimRng {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ iteration);
    h = splitmix64(h ^ step.rotate_left(32));
    h = splitmix64(h ^ row);
    ChaCha8Rng::seed_from_u64(h)
}
