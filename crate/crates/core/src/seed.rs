//! Counter-based seed derivation.
//!
//! Every random stream in the crate is keyed by a root seed plus a path of
//! integer tags, so adding a new consumer never shifts an existing stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and a tag path.
pub fn derive(root: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(root), |acc, &tag| {
        splitmix(acc ^ splitmix(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
    })
}

/// A generator seeded from `derive(root, tags)`.
pub fn rng(root: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(root, tags))
}

/// Well-known subsystem tags for [`derive`].
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const MASK: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const PROBE: u64 = 6;
    pub const COARSE: u64 = 7;
}
