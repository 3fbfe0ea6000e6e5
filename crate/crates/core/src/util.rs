//! Seeding and hashing helpers shared across modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Deterministic RNG for a named stream derived from a base seed.
pub fn rng_for(seed: u64, stream: &str) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a value's JSON form with object keys sorted, so it is stable
/// under key reordering in the source file.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    // serde_json's default map is ordered by key
    let text = serde_json::to_string(&v).expect("json");
    sha256_hex(text.as_bytes())
}

/// Writes via a sibling temp file and rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> crate::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
