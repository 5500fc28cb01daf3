//! Seed derivation.
//!
//! All randomness is ChaCha8 keyed by a user seed; independent streams
//! (per replicate, per sample, per epoch) are selected with `set_stream`, so
//! a stream's output never depends on how many other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams of different consumers apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Bootstrap = 1,
    SynthSample = 2,
    SynthProjection = 3,
    Split = 4,
    TeacherInit = 5,
    StudentInit = 6,
    TeacherShuffle = 7,
    StudentShuffle = 8,
    Ordering = 9,
    Fixture = 10,
}

/// FNV-1a over bytes, for turning identifiers into stream keys.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for stream `index` of `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(purpose as u64)));
    rng.set_stream(index);
    rng
}
