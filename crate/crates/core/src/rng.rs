//! Seeded random streams. Every random quantity in the crate is drawn from a
//! ChaCha stream identified by `(seed, stream)`, so results never depend on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Well-known stream identifiers so unrelated consumers of one seed never
/// share draws.
pub(crate) mod streams {
    pub const DATA_ORDER: u64 = 1;
    pub const CORRUPTION_INIT: u64 = 2;
    pub const HUTCHINSON: u64 = 3;
    pub const PROBE_ORDER: u64 = 4;
    /// Monte Carlo chunks use `MONTE_CARLO_BASE + chunk`.
    pub const MONTE_CARLO_BASE: u64 = 1 << 32;
}
