//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by `(seed, domain, index)` so
//! that frames can be generated in any order, or in parallel, and still be
//! bit-identical to a sequential run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct constants keep e.g. camera noise for frame 3
/// independent from the blink draws of site 3.
pub mod domain {
    pub const BLINK: u64 = 0x424c_494e_4b00_0001;
    pub const CAMERA: u64 = 0x4341_4d45_5241_0002;
    pub const CODEC: u64 = 0x434f_4445_4300_0003;
    pub const SCENE: u64 = 0x5343_454e_4500_0004;
    pub const FRC: u64 = 0x4652_4300_0000_0005;
    pub const DATASET: u64 = 0x4441_5441_0000_0006;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a domain tag and a counter into a 64-bit stream key.
pub fn derive(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ domain) ^ index)
}

/// RNG for one `(seed, domain, index)` stream.
pub fn stream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, domain, index))
}
