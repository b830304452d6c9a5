//! Seeded random streams with named substream derivation.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha20Rng`] whose
//! seed is derived from a root seed, a task name and an index. Two tasks
//! never share a stream, and the stream of a task does not depend on how
//! many other tasks ran before it, so ensembles can be evaluated in any
//! order (or in parallel) and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Root of a tree of reproducible random streams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedStream {
    key: [u8; 32],
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"rsamp-root");
        h.update(seed.to_le_bytes());
        Self { key: h.finalize().into() }
    }

    /// Child stream identified by `name` and `index`.
    pub fn substream(&self, name: &str, index: u64) -> SeedStream {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update(index.to_le_bytes());
        SeedStream { key: h.finalize().into() }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.key)
    }
}
