//! Counter-based RNG derivation.
//!
//! Every random decision in the crate is drawn from a stream derived from
//! (master seed, domain label, index). Derivation is stateless, so any
//! iteration or batch item can be replayed in isolation and parallel workers
//! cannot perturb each other's streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-period mixing of a 64-bit counter.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a sub-seed for a named purpose (e.g. per-network init seeds).
pub fn derive_seed(master_seed: u64, domain: &str) -> u64 {
    mix64(master_seed ^ hash_label(domain))
}

/// Derive an independent ChaCha stream for (seed, domain, indices).
pub fn derive_rng(master_seed: u64, domain: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut state = mix64(master_seed ^ hash_label(domain));
    for &ix in indices {
        state = mix64(state ^ ix);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
