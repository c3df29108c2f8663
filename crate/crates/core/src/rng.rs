//! Named, independent random streams derived from one run seed.
//!
//! Every consumer (parameter init, data, probes) draws from its own
//! ChaCha stream, so adding draws to one never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Well-known stream names.
pub mod streams {
    pub const INIT: &str = "init";
    pub const DATA: &str = "data";
    pub const PROBE: &str = "probe";
    pub const EVAL: &str = "eval";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    seed: u64,
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl SeedStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(fnv1a(name));
        rng
    }

    /// Derives a 64-bit seed for a named consumer that wants its own seed.
    pub fn derive(&self, name: &str) -> u64 {
        use rand::RngCore;
        self.stream(name).next_u64()
    }
}

/// Convenience for code paths that take a bare seed.
pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
