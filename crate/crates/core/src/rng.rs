//! Counter-based seeding.
//!
//! Every random stream is a ChaCha8 generator keyed by the root seed and
//! selected by a 64-bit stream id `replicate * 16 + purpose`. Two runs with the
//! same root seed therefore draw the same numbers for the same replicate and
//! purpose, regardless of how replicates are scheduled across threads. The
//! exact (labelled) and spectrum simulators read jump sizes and holding times
//! from the same streams, so they share the `Δ` and `W` sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role of a random stream within one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Jumps = 0,
    Blocks = 1,
    Holding = 2,
    Stable = 3,
    Coupling = 4,
    Auxiliary = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRoot(pub u64);

impl SeedRoot {
    pub fn stream(self, replicate: u64, purpose: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(replicate.wrapping_mul(16).wrapping_add(purpose as u64));
        rng
    }

    /// Per-replicate set of the three streams a coalescent path consumes.
    pub fn path_streams(self, replicate: u64) -> PathStreams {
        PathStreams {
            jumps: self.stream(replicate, Stream::Jumps),
            blocks: self.stream(replicate, Stream::Blocks),
            holding: self.stream(replicate, Stream::Holding),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathStreams {
    pub jumps: ChaCha8Rng,
    pub blocks: ChaCha8Rng,
    pub holding: ChaCha8Rng,
}
