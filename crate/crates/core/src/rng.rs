//! Seeded random streams.
//!
//! Every stochastic draw goes through a ChaCha8 generator whose seed is
//! derived from a base seed and a tuple of stream coordinates (step, image,
//! sample index, ...). Streams are therefore independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream coordinates into a 64-bit seed.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(base: u64, coords: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, coords))
}

/// Stream tags, so that e.g. the batch stream for step 3 and the noise stream
/// for step 3 never coincide.
pub mod tag {
    pub const BATCH: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const CHECK: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, &[1, 2]).random();
        let b: u64 = stream(7, &[1, 2]).random();
        let c: u64 = stream(7, &[2, 1]).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(0, &[0]), derive_seed(0, &[1]));
    }
}
