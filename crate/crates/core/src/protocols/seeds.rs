use sha2::{Digest, Sha256};

/// Deterministic sub-seed for one purpose within an experiment.
///
/// Distinct `(label, parts)` pairs give unrelated seeds, so e.g. initial
/// training of one grid point does not depend on which retraining rates are
/// scanned afterwards.
pub fn derive_seed(base: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
