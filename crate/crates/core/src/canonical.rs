//! Canonical JSON encoding and content hashing.
//!
//! `serde_json::Value` keeps object keys in a `BTreeMap`, so round-tripping a
//! value through it yields sorted keys. Every hash and every dataset line in
//! this crate goes through here.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Serialize with sorted keys and no insignificant whitespace.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    serde_json::to_string(&value)
}

pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// SHA-256 of the canonical JSON form.
pub fn canonical_hash<T: Serialize + ?Sized>(value: &T) -> String {
    // Serializing plain data structures into a Value cannot fail.
    let s = to_canonical_string(value).expect("value is JSON-serializable");
    sha256_hex(s.as_bytes())
}
