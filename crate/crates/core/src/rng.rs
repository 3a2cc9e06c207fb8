//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha stream keyed by the master
//! seed plus a path of indices (probe, repetition, ...), so results do not
//! depend on the order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of indices into a single 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(master: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Stream domains, so that e.g. probe 3 of the ensemble and repetition 3 of a
/// shot simulation never share a stream.
pub mod domain {
    pub const MODEL: u64 = 1;
    pub const ENSEMBLE: u64 = 2;
    pub const SHOTS: u64 = 3;
    pub const GAUSSIAN: u64 = 4;
    pub const CHOOSER: u64 = 5;
    pub const CHANNEL: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const INSTANCE: u64 = 8;
}
