//! Named random sub-streams derived from one run seed.
//!
//! Each consumer draws from its own ChaCha stream, so adding draws in one
//! place (say, shuffling) never shifts another (weight initialization).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE_S: &str = "shuffle-s";
pub const SHUFFLE_T: &str = "shuffle-t";
pub const SPLIT: &str = "split";
pub const DIAGNOSTICS: &str = "diagnostics";
pub const DATA: &str = "data";

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    rng
}
