//! Counter-based stream derivation.
//!
//! Every random stream in the crate is keyed by `(master seed, stream ids...)`
//! and hashed with a SplitMix64 finalizer into a ChaCha8 seed. A partition of
//! work therefore draws the same numbers no matter which worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a path of stream identifiers.
pub fn derive_key(seed: u64, ids: &[u64]) -> u64 {
    ids.iter().fold(splitmix(seed), |acc, &id| splitmix(acc ^ splitmix(id)))
}

/// Independent generator for the stream identified by `ids` under `seed`.
pub fn stream(seed: u64, ids: &[u64]) -> StreamRng {
    let mut bytes = [0u8; 32];
    let mut k = derive_key(seed, ids);
    for chunk in bytes.chunks_mut(8) {
        k = splitmix(k);
        chunk.copy_from_slice(&k.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

/// Stream tags used across modules so identifiers never collide.
pub mod tag {
    pub const DRIFT: u64 = 1;
    pub const POLARIZATION: u64 = 2;
    pub const LOOP: u64 = 3;
    pub const DETECT: u64 = 4;
    pub const PHASE_NOISE: u64 = 5;
    pub const FRAMES: u64 = 6;
    pub const POLARIZATION_LOOP: u64 = 7;
}
