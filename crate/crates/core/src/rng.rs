//! Seeded random streams. Every consumer draws from its own ChaCha stream
//! so equal user seeds never produce correlated draws across components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Shuffle = 0,
    Dropout = 1,
    Init = 2,
    CrossPlan = 3,
    InPlan = 4,
    MdlOrder = 5,
    AmnesicSplit = 6,
    RandomRemoval = 7,
    Synth = 8,
}

pub(crate) fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
