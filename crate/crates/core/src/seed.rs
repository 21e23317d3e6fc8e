//! Seeded random streams.
//!
//! Every consumer of randomness draws from a ChaCha8 generator keyed by a
//! 64-bit seed and a 64-bit stream index. Trajectory `n` of a batch always
//! uses stream `n`, so the order in which trajectories are generated (or the
//! number of threads generating them) never changes the values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a sub-seed for a named purpose from a master seed.
///
/// The purpose label is hashed with 64-bit FNV-1a, xored into the master
/// seed and passed through one SplitMix64 round. Distinct labels give
/// unrelated seeds, so e.g. changing the test-set size never perturbs the
/// training data.
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
