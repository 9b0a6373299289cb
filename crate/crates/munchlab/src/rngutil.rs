//! Seed derivation for independent random streams.
//!
//! Every stage of the pipeline draws from its own ChaCha stream derived from
//! the master seed and a purpose label. Streams stay stable when an unrelated
//! stage changes how many values it consumes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a dedicated RNG for `label` from a master seed.
///
/// The stream depends on the byte content of `label`, so two distinct labels
/// give statistically independent streams and the same pair always gives the
/// same stream.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Derives a child seed for `label`; used where a stage wants to re-derive
/// its own sub-streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_stable_and_label_separated() {
        let mut a = derive_rng(7, "entities");
        let mut b = derive_rng(7, "entities");
        let mut c = derive_rng(7, "chains");
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(0, "a"), derive_seed(0, "b"));
        assert_eq!(derive_seed(42, "gen"), derive_seed(42, "gen"));
    }
}
