//! Counter-based seed derivation. Every random stream in a run is keyed by
//! `(master seed, stream tag, round, client)`, so changing one stream (for
//! example the participation rate) never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dataset = 1,
    Partition = 2,
    Split = 3,
    Init = 4,
    Sampling = 5,
    LocalTraining = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, round: u64, client: u64) -> u64 {
    let mut h = splitmix64(master);
    for part in [stream as u64, round, client] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn rng_for(master: u64, stream: Stream, round: u64, client: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, round, client))
}
