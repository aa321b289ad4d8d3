//! Content hashes recorded in artifacts.

use sha2::{Digest, Sha256};

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short (16 hex chars) hash of a serializable value's canonical JSON form.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    sha256_hex(&json)[..16].to_string()
}
