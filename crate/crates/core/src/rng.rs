//! Seed derivation. Every stochastic step draws from its own named stream so
//! that adding a consumer in one stage never shifts the draws of another.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stable 64-bit hash (FNV-1a followed by an avalanche finalizer so that the
/// low bits depend on every input bit); identical on every platform.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    avalanche(h.finish())
}

fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(stream.as_bytes());
    h.finish()
}

pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, name))
}
