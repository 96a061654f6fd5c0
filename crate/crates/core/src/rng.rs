//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit `&mut impl Rng`; runs are
//! reproduced from a single [`RngSeed`] by deriving independent sub-streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> SimRng {
        seeded(self.0)
    }

    /// Independent stream for a named purpose, e.g. `seed.stream(2)` for the
    /// second codec pair.
    pub fn stream(self, stream: u64) -> SimRng {
        let mut rng = seeded(self.0);
        rng.set_stream(stream);
        rng
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
