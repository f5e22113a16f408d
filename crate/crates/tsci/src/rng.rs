//! Deterministic seed derivation.
//!
//! All randomness in the crate flows through ChaCha12 streams keyed by a
//! master seed plus a stream label, so that trees, bootstrap replicates, and
//! simulation replicates are reproducible independently of scheduling order.
//! Standard-normal draws use the ziggurat sampler from `rand_distr`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; decorrelates nearby (seed, label) pairs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a stream label.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    mix(master ^ mix(label))
}

/// RNG for the stream `(master, label)`.
pub fn stream_rng(master: u64, label: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, label))
}
