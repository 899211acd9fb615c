//! Named random substreams derived from one master seed.
//!
//! Every subsystem draws from its own ChaCha stream, so extra draws in one
//! place (say, a policy's tie-breaks) never shift the numbers another
//! subsystem sees. This is what makes common random numbers work across
//! policies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Stream {
    SourceClasses = 1,
    Population = 2,
    Partition = 3,
    Seeding = 4,
    Cascade = 5,
    Flags = 6,
    Policy = 7,
    ValueNoise = 8,
}

/// Rng for `(stream, index)` under `master`. Index is e.g. an epoch or news id.
pub fn substream(master: u64, stream: Stream, index: u64) -> SimRng {
    debug_assert!(index < 1 << 56);
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((stream as u64) << 56) | index);
    rng
}
