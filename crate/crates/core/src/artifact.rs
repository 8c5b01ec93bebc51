//! Provenance stamp shared by every emitted artifact.

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// Hash of any serializable config, over its canonical JSON encoding.
    pub fn of<T: Serialize>(config: &T, seed: u64) -> Self {
        let json = serde_json::to_vec(config).expect("config serializes");
        Self::new(hex::encode(Sha256::digest(json)), seed)
    }

    /// `# config_hash=<hex> seed=<n>`, without a trailing newline.
    pub fn comment(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }

    pub fn svg_comment(&self) -> String {
        format!(
            "<!-- config_hash={} seed={} -->",
            self.config_hash, self.seed
        )
    }
}

impl Default for Stamp {
    fn default() -> Self {
        Self::new("unhashed", 0)
    }
}
