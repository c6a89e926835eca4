//! Deterministic random streams.
//!
//! Every consumer of randomness asks for a stream keyed by
//! `(base seed, trial index, purpose tag)`. The 256-bit ChaCha seed is the
//! SHA-256 digest of a domain prefix followed by the little-endian base and
//! trial and the UTF-8 tag, so streams are platform independent and adding a
//! new tag never shifts an existing stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream generator used throughout the crate.
pub type Stream = ChaCha8Rng;

const DOMAIN: &[u8] = b"khm-stream-v1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSeed {
    pub base: u64,
}

impl RngSeed {
    pub const fn new(base: u64) -> Self {
        Self { base }
    }

    /// The raw 32-byte key for `(trial, tag)`.
    pub fn derive(&self, trial: u64, tag: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(DOMAIN);
        hasher.update(self.base.to_le_bytes());
        hasher.update(trial.to_le_bytes());
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        key
    }

    pub fn stream(&self, trial: u64, tag: &str) -> Stream {
        ChaCha8Rng::from_seed(self.derive(trial, tag))
    }
}

impl From<u64> for RngSeed {
    fn from(base: u64) -> Self {
        Self::new(base)
    }
}

/// Purpose tags used by the library. Kept in one place so streams stay stable.
pub mod tags {
    pub const PATTERNS: &str = "patterns";
    pub const CALIBRATION_PATTERNS: &str = "calibration/patterns";
    pub const CALIBRATION_NOISE: &str = "calibration/noise";
    pub const INFLUENCE: &str = "influence";

    pub fn recall_noise(rho: f64) -> String {
        format!("recall-noise/{rho:?}")
    }
}
