//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness gets its own stream keyed by purpose and
//! owner, so enabling one feature never shifts the draws another sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Placement = 1,
    Offsets = 2,
    HpmNodes = 3,
    Sps = 4,
    Decode = 5,
    Shadowing = 6,
    HpmPhase = 7,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(master: u64, purpose: Purpose, owner: u64) -> u64 {
    mix64(mix64(master ^ mix64(purpose as u64)) ^ owner)
}

pub fn substream(master: u64, purpose: Purpose, owner: u64) -> SimRng {
    SimRng::seed_from_u64(stream_seed(master, purpose, owner))
}
