//! Deterministic stream seeding.
//!
//! Every source of randomness in the crate derives its seed from a base seed
//! plus a tag path (fold id, replication index, bootstrap draw, ...), so the
//! same configuration reproduces the same numbers regardless of how the work
//! is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a base seed with a tag path into a single 64-bit stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    let mut out = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xff51_afd7_ed55_8ccd);
        out ^= splitmix64(&mut state);
    }
    out
}

/// RNG for the stream identified by `(base, tags)`.
pub fn stream_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
