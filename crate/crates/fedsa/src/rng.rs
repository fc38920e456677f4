//! Deterministic, splittable random streams.
//!
//! Every source of randomness in an experiment is a `(seed, stream)` pair so
//! that per-client work can run in parallel and still reproduce the
//! sequential trajectory bit for bit.

use rand::rngs::StdRng;
use rand::SeedableRng;

/// A named random stream: identical `(seed, stream)` pairs always produce
/// identical draw sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> StdRng {
        StdRng::seed_from_u64(splitmix64(splitmix64(self.seed) ^ self.stream))
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream-id layout: a role tag in the high bits keeps the per-round and
/// per-client streams from ever colliding.
pub mod streams {
    const ROLE_SHIFT: u64 = 48;
    const ROUND_SHIFT: u64 = 20;

    pub const INIT: u64 = 1 << ROLE_SHIFT;
    pub const PARTITION: u64 = 2 << ROLE_SHIFT;
    pub const DATASET: u64 = 3 << ROLE_SHIFT;

    /// Local training of `client` during `round`.
    pub fn train(round: u32, client: usize) -> u64 {
        (4 << ROLE_SHIFT) | ((round as u64) << ROUND_SHIFT) | client as u64
    }

    /// Client subsampling for `round`.
    pub fn sampler(round: u32) -> u64 {
        (5 << ROLE_SHIFT) | round as u64
    }

    /// Aggregator-internal randomness (DNC subsampling, power-iteration start).
    pub fn aggregator(round: u32) -> u64 {
        (6 << ROLE_SHIFT) | round as u64
    }

    /// Honest proxy training run by malicious client `client` during `round`.
    pub fn proxy(round: u32, client: usize) -> u64 {
        (7 << ROLE_SHIFT) | ((round as u64) << ROUND_SHIFT) | client as u64
    }

    /// Server-side root training (trust-score aggregation).
    pub fn server_root(round: u32) -> u64 {
        (8 << ROLE_SHIFT) | round as u64
    }

    /// Per-client jitter applied to malicious submissions.
    pub fn jitter(round: u32, client: usize) -> u64 {
        (9 << ROLE_SHIFT) | ((round as u64) << ROUND_SHIFT) | client as u64
    }
}
