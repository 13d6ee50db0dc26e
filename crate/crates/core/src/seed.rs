//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by `(seed, purpose, index)`, so results never depend on iteration
//! order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, purpose: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ index)
}

pub fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, purpose, index))
}

// Purpose tags keep the streams of different consumers apart.
pub(crate) const ANT: u64 = 0x0041_4e54;
pub(crate) const SMTD: u64 = 0x534d_5444;
pub(crate) const NATD: u64 = 0x4e41_5444;
pub(crate) const INIT: u64 = 0x494e_4954;
pub(crate) const SHUFFLE: u64 = 0x5348_5546;
pub(crate) const DROPOUT: u64 = 0x4452_4f50;
pub(crate) const FIXTURE: u64 = 0x4649_5854;
pub(crate) const PROBE: u64 = 0x5052_4f42;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, ANT, 3).gen();
        let b: u64 = stream(7, ANT, 3).gen();
        let c: u64 = stream(7, ANT, 4).gen();
        let d: u64 = stream(7, SMTD, 3).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
