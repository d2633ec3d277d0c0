//! Seed derivation for independent, order-free random streams.
//!
//! Every stochastic component takes an explicit seed. Sub-streams are keyed
//! by a path of integers (replicate, stage, pick, ...) mixed through
//! SplitMix64, so a stream never depends on how many draws another stream
//! consumed or on which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with each key in turn.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(GOLDEN))))
}

/// A ChaCha8 generator for the stream `(base, keys...)`.
pub fn stream(base: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, keys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let x: u64 = stream(7, &[1, 2]).random();
        let y: u64 = stream(7, &[1, 2]).random();
        let z: u64 = stream(7, &[2, 1]).random();
        assert_eq!(x, y);
        assert_ne!(x, z);
        assert_ne!(derive_seed(7, &[]), derive_seed(8, &[]));
    }
}
