use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams derived from a run seed, so that changing how one
/// component consumes randomness never perturbs another.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Stream {
    Synthesize = 1,
    Partition = 2,
    Train = 3,
    Folds = 4,
    Topology = 5,
    Views = 6,
    RandomOrder = 7,
}

/// SplitMix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(stream as u64)))
}

pub(crate) fn substream(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(stream as u64)) ^ index))
}
