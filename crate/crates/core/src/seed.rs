//! Named seed substreams derived from one global seed.

use sha2::{Digest, Sha256};

/// Derives an independent seed for the substream `name`.
pub fn derive(global: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
