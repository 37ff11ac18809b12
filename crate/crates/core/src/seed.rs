//! Deterministic randomness and content digests.
//!
//! Every random stream in the pipeline is derived from one root seed and a
//! textual label, so adding a stage or a seed never perturbs another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `root` and a label such as `"kmeans/restart/3"`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update([0u8]);
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

pub fn rng_for(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn digest_hex(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a matrix's shape and bit patterns, used to stamp artifacts.
pub fn matrix_digest(tasks: &[impl AsRef<str>], values: &nalgebra::DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    for t in tasks {
        h.update(t.as_ref().as_bytes());
        h.update([0u8]);
    }
    h.update((values.nrows() as u64).to_le_bytes());
    h.update((values.ncols() as u64).to_le_bytes());
    for i in 0..values.nrows() {
        for j in 0..values.ncols() {
            h.update(values[(i, j)].to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
