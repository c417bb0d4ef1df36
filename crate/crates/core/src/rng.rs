//! Counter-style random streams.
//!
//! Every random quantity in a run is drawn from a stream identified by the
//! master seed, a domain tag and an index, so results never depend on the
//! order in which worker threads pick up work.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Domain tags separating independent uses of the same master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// One stream per channel realization.
    Sample = 0x5a4d_504c_0000_0001,
    /// Model-based draws (PDT sampling, Monte Carlo oracles).
    Model = 0x4d4f_4445_0000_0002,
    /// Verification runs of the screen generators.
    Screens = 0x5343_524e_0000_0003,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream number `index` within `domain` for `master_seed`.
pub fn stream(master_seed: u64, domain: Domain, index: u64) -> Stream {
    let mut key = [0u8; 32];
    let mut state = master_seed ^ domain as u64;
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Stream of the `index`-th channel realization.
pub fn sample_stream(master_seed: u64, index: u64) -> Stream {
    stream(master_seed, Domain::Sample, index)
}
