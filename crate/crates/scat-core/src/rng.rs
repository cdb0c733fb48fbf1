//! Named, reproducible random number streams.
//!
//! Every stochastic component draws from a [`ChaCha8Rng`] whose 64-bit seed is
//! derived from the experiment's master seed, a static purpose tag, and any
//! number of integer coordinates (example index, view index, epoch, ...).
//! Two consequences:
//!
//! - runs are bit-reproducible for a fixed master seed, regardless of thread
//!   count or evaluation order, because each unit of work owns its stream;
//! - distinct purposes never share a stream, so adding a consumer somewhere
//!   cannot shift the draws seen elsewhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `splitmix64` step; the standard 64-bit mixer used to expand seed material.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit stream seed from the master seed, a tag, and coordinates.
///
/// The tag bytes and each coordinate are folded into a `splitmix64` chain, so
/// `("augment", [3, 1])` and `("augment", [3])` followed by anything else are
/// unrelated streams.
pub fn derive_seed(master: u64, tag: &str, coords: &[u64]) -> u64 {
    let mut state = master ^ 0x5851_f42d_4c95_7f2d;
    let mut out = splitmix64(&mut state);
    for chunk in tag.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(word);
        out ^= splitmix64(&mut state);
    }
    state ^= tag.len() as u64;
    out ^= splitmix64(&mut state);
    for &c in coords {
        state ^= c;
        out ^= splitmix64(&mut state);
    }
    out
}

/// A ChaCha8 stream for `(master, tag, coords)`; see [`derive_seed`].
pub fn stream(master: u64, tag: &str, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, coords))
}
