//! Seed derivation. Every random stream in the workbench is a ChaCha8 stream
//! keyed by a sub-seed derived from one root seed, a component name and an
//! index, so any run is reproducible from the configuration alone and the
//! result does not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream type used throughout the crate.
pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the sub-seed for `(component, index)` under `root`.
///
/// FNV-1a over the component name, mixed with the root and index through
/// SplitMix64. Stable across platforms and toolchains.
pub fn derive_seed(root: u64, component: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in component.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(root ^ h) ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Shorthand for `rng_from_seed(derive_seed(root, component, index))`.
pub fn derived_rng(root: u64, component: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(root, component, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derivation_is_stable_and_separates_components() {
        assert_eq!(derive_seed(1, "grid", 3), derive_seed(1, "grid", 3));
        assert_ne!(derive_seed(1, "grid", 3), derive_seed(1, "grid", 4));
        assert_ne!(derive_seed(1, "grid", 3), derive_seed(1, "mc", 3));
        assert_ne!(derive_seed(1, "grid", 3), derive_seed(2, "grid", 3));
    }

    #[test]
    fn derived_streams_repeat() {
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(derived_rng(9, "x", 0), |r, _| Some(r.random()))
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(derived_rng(9, "x", 0), |r, _| Some(r.random()))
            .collect();
        assert_eq!(a, b);
    }
}
