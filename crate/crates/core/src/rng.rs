//! Seeded random streams.
//!
//! Each consumer of randomness gets its own ChaCha stream derived from a base
//! seed and a purpose tag, so adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for independent streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    LabeledOrder = 2,
    UnlabeledOrder = 3,
    LabeledAugment = 4,
    UnlabeledAugment = 5,
    Mix = 6,
    Split = 7,
    Budget = 8,
    Synth = 9,
    Dedims = 10,
    Validation = 11,
}

/// Build the stream `stream` for `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Mix a seed with an index (SplitMix64 finaliser) to derive child seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
