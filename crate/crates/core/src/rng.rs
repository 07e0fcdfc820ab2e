//! Seeded randomness. Every sampler in the crate draws from a ChaCha stream
//! so results are identical across platforms and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type AuditRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> AuditRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index (splitmix64 finalizer) so that
/// independent components get decorrelated streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named sub-streams used by the pipelines.
pub(crate) mod stream {
    pub const SPLIT: u64 = 2;
    pub const TARGET_INIT: u64 = 3;
    pub const TARGET_OPT: u64 = 4;
    pub const SHADOW: u64 = 5;
    pub const QUANTILE_INIT: u64 = 6;
    pub const QUANTILE_OPT: u64 = 7;
    pub const QUERY: u64 = 8;
    pub const SUBSAMPLE: u64 = 9;
    pub const CALIB_SPLIT: u64 = 10;
    pub const DIRECTIONS: u64 = 11;
    pub const GMM_P: u64 = 12;
    pub const GMM_Q: u64 = 13;
}
