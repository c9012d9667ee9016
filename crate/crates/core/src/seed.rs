//! Stable seed derivation. Every random stream in the crate is a
//! `ChaCha8Rng` seeded through these helpers, so outputs do not depend on
//! platform hashers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for the `index`-th sub-stream of `seed`.
pub fn child(seed: u64, index: u64) -> u64 {
    hash_parts(seed, &[&index.to_le_bytes()])
}

/// Seed derived from a parent seed and a string label (scene id, prompt).
pub fn keyed(seed: u64, label: &str) -> u64 {
    hash_parts(seed, &[label.as_bytes()])
}

pub fn hash_parts(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn children_are_distinct_and_stable() {
        assert_eq!(child(7, 0), child(7, 0));
        assert_ne!(child(7, 0), child(7, 1));
        assert_ne!(keyed(7, "a"), keyed(7, "b"));
    }
}
