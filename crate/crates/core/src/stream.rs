//! Named deterministic random streams.
//!
//! A stream is identified by a seed string and a `/`-separated path of
//! labels. Its key is a SHA-256 chain over the path, so substreams are
//! independent of one another and of the order in which they are created.
//! Draws come from ChaCha20 keyed by the stream key.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: String,
    path: String,
    key: [u8; 32],
}

fn hash_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&out);
    key
}

impl RngStream {
    /// Root stream for a seed string.
    pub fn root(seed: &str) -> Self {
        Self {
            seed: seed.to_owned(),
            path: String::new(),
            key: hash_parts(&[b"rwbench-root", seed.as_bytes()]),
        }
    }

    /// Rebuilds a stream from its serialized `(seed, stream)` pair.
    pub fn from_parts(seed: &str, path: &str) -> Result<Self> {
        let mut s = Self::root(seed);
        if path.is_empty() {
            return Ok(s);
        }
        for label in path.split('/') {
            if label.is_empty() {
                return Err(Error::Config(format!("empty label in stream path {path:?}")));
            }
            s = s.child(label);
        }
        Ok(s)
    }

    /// Named substream. Labels must not contain `/`.
    pub fn child(&self, label: &str) -> Self {
        assert!(!label.contains('/'), "stream label {label:?} contains '/'");
        let path = if self.path.is_empty() {
            label.to_owned()
        } else {
            format!("{}/{}", self.path, label)
        };
        Self {
            seed: self.seed.clone(),
            path,
            key: hash_parts(&[&self.key, label.as_bytes()]),
        }
    }

    /// Indexed substream, e.g. one per grid point or Monte Carlo chunk.
    pub fn index(&self, i: u64) -> Self {
        self.child(&i.to_string())
    }

    pub fn seed(&self) -> &str {
        &self.seed
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.key)
    }

    pub fn id(&self) -> StreamId {
        StreamId {
            seed: self.seed.clone(),
            stream: self.path.clone(),
        }
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RngStream({:?}:{:?})", self.seed, self.path)
    }
}

/// Serialized stream identifier: `{"seed": ..., "stream": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: String,
    pub stream: String,
}

impl StreamId {
    pub fn open(&self) -> Result<RngStream> {
        RngStream::from_parts(&self.seed, &self.stream)
    }
}
