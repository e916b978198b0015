//! Seed fan-out. One master seed drives every stage; each stage derives its
//! own stream from the master seed and a stable stage name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate.
pub type StageRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stage seed from the master seed and a stage name.
///
/// FNV-1a over the name, mixed with the master seed through splitmix64. The
/// mapping is fixed and platform independent.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(master ^ splitmix64(h))
}

pub fn rng_from_seed(seed: u64) -> StageRng {
    StageRng::seed_from_u64(seed)
}

pub fn stage_rng(master: u64, stage: &str) -> StageRng {
    rng_from_seed(derive_seed(master, stage))
}
