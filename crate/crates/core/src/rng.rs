//! Seeded random sub-streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(master seed, domain, index)`. Work items (replicates, Monte-Carlo chunks)
//! each own one stream, so results never depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Separates the purposes a master seed is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Data = 0x0d47_a000,
    TestPoints = 0x7e57_0000,
    Volume = 0x0b0c_5000,
    UniformChunk = 0xc40c_0000,
    Clt = 0x0c17_0000,
    Misc = 0x3157_0000,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed; used when a stream needs to hand a seed to a
/// component that draws its own sub-streams (e.g. Monte-Carlo volume draws).
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ domain as u64).wrapping_add(index))
}

pub fn substream(seed: u64, domain: Domain, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ domain as u64));
    rng.set_stream(index);
    rng
}
