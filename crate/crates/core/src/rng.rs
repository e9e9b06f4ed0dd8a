//! Named, splittable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `sha256(tag || seed || index)`,
//! so two streams with different purpose tags never overlap and the bytes are
//! identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(tag: &str, seed: u64, index: u64) -> StreamRng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update(index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"derive");
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Lowercase hex of the first `n_bytes` of `sha256(bytes)`.
pub fn short_hash(bytes: &[u8], n_bytes: usize) -> String {
    let d = Sha256::digest(bytes);
    d[..n_bytes.min(32)].iter().map(|b| format!("{b:02x}")).collect()
}
