//! Seed derivation for deterministic, scheduling-independent RNG streams.
//!
//! Every stochastic site in the simulator owns a stream derived from the
//! scenario seed plus a static label and the identifiers that scope it
//! (client id, round, ...). Streams are therefore independent of the order
//! in which clients are processed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a label and a list of scope values into a single 64-bit seed.
pub fn derive_seed(root: u64, label: &str, scope: &[u64]) -> u64 {
    let mut acc = mix(root);
    for &b in label.as_bytes() {
        acc = mix(acc ^ u64::from(b));
    }
    for &v in scope {
        acc = mix(acc ^ v);
    }
    acc
}

/// A ChaCha8 stream for the given label/scope.
pub fn stream(root: u64, label: &str, scope: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, scope))
}
