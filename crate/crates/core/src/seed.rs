//! Stable hashing and seed derivation. Every stochastic choice in a run is
//! derived from the root seed through these functions, so results never
//! depend on thread scheduling.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Derives a child seed from a root seed and a path of labels.
pub fn derive_seed(root: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Maps a seed to a uniform draw in [0, 1).
pub fn unit_draw(seed: u64) -> f64 {
    // top 53 bits
    (seed >> 11) as f64 / (1u64 << 53) as f64
}
