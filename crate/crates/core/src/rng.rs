//! Seeded random substreams.
//!
//! Every random draw in the simulator comes from a ChaCha8 generator keyed by
//! the run seed. Independent consumers get independent streams: the stream id
//! packs a [`Domain`] tag into the top 16 bits and a per-domain counter
//! (waypoint index, window index, episode index, ...) into the low 48 bits.
//! Because a stream is addressed by `(seed, domain, index)` rather than by the
//! order in which streams are created, running consumers in a different order
//! or in parallel cannot change any result.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Substream families. The discriminant is part of the stream id, so
/// existing values must never be renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum Domain {
    World = 1,
    Sensors = 2,
    Imaging = 3,
    Audio = 4,
    Topics = 5,
    Tracking = 6,
    Target = 7,
    Experiment = 8,
}

const INDEX_BITS: u32 = 48;
const INDEX_MASK: u64 = (1 << INDEX_BITS) - 1;

/// Returns the generator for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(domain, index));
    rng
}

fn stream_id(domain: Domain, index: u64) -> u64 {
    ((domain as u64) << INDEX_BITS) | (index & INDEX_MASK)
}
