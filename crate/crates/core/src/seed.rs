//! Seed fan-out and content hashing.
//!
//! Every random stream is derived from one command-level seed:
//! `derive_seed(root, label, index)` takes the first 8 bytes (little endian)
//! of `sha256(root_le || label || index_le)`. Labels in use: `"planner"`,
//! `"dataset"`, `"negative"`, `"split"`, `"init"`, `"shuffle"`, `"scenario"`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, index))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of a value. Struct field order is fixed by
/// declaration and maps are `BTreeMap`s, so the encoding is stable.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    sha256_hex(&bytes)[..16].to_string()
}
