//! Deterministic random streams.
//!
//! Every source of randomness in a run is a ChaCha stream whose seed is
//! derived from the master seed, a purpose label, and integer indices.
//! Two runs with the same config and seed therefore draw identical values
//! regardless of thread scheduling or evaluation order elsewhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer. Good avalanche, cheap, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a over the label bytes keeps purposes from colliding.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the stream identified by (master, purpose, indices).
pub fn seed_for(master: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut z = mix(master ^ hash_label(purpose));
    for &i in indices {
        z = mix(z ^ i);
    }
    z
}

/// Fresh generator for the given stream identity.
pub fn rng_for(master: u64, purpose: &str, indices: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed_for(master, purpose, indices))
}
