//! Counter-based random streams.
//!
//! Every consumer of randomness asks for a stream keyed by `(seed, scenario, slot)`.
//! ChaCha exposes 2^64 independent streams per key, so the stream for a given
//! slot never depends on how many other slots were drawn before it or on which
//! worker thread draws it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Slot reserved for the backward Brownian motion of a scenario.
pub(crate) const BROWNIAN_SLOT: u64 = 0;

/// Stream for one `(scenario, slot)` pair. Lévy path `j` uses slot `j + 1`.
pub fn substream(seed: u64, scenario: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((scenario << 32) ^ slot);
    rng
}

/// Stream for Lévy path `path` of scenario `scenario`.
pub fn path_stream(seed: u64, scenario: usize, path: usize) -> ChaCha8Rng {
    substream(seed, scenario as u64, path as u64 + 1)
}
