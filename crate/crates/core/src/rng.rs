//! Reproducible random substreams.
//!
//! Every random draw in a run is taken from a ChaCha stream keyed by the run
//! seed and addressed by `(iteration, block, purpose)`. Two runs that differ
//! only in scheduling (lazy vs eager updates, parallel block evaluation) see
//! exactly the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    BlockSample = 1,
    UpperBatch = 2,
    LowerBatch = 3,
    InitUpper = 4,
    InitLower = 5,
    WarmStart = 6,
    RandomIterate = 7,
    Problem = 8,
    Data = 9,
    WarmStartSubproblem = 10,
    /// Random points of verification tools.
    Diagnostics = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one 64-bit value.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Child seed `index` of `base`, e.g. for the stages of a multi-stage run.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix(&[base, index, 0x5eed])
}

/// Generator for `(seed, iter, block, purpose)`.
pub fn substream(seed: u64, iter: u64, block: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mix(&[iter, block, purpose as u64]));
    rng
}
