//! Per-replicate random streams.
//!
//! Every replicate draws from its own ChaCha8 stream selected by the
//! replicate index, so results do not depend on how replicates are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Name recorded in run manifests.
pub const GENERATOR_NAME: &str = "ChaCha8Rng(seed_from_u64(seed)), stream = replicate index";

/// Generator for replicate `replicate` of an experiment seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Derives an independent experiment seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
