//! Content hashes and canonical JSON digests.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Compact JSON with object keys sorted at every level.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json::Value keeps objects in a BTreeMap, so a round trip sorts keys.
    let value = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&value).expect("value serializes")
}

pub fn digest_json<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(canonical_json(value).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn key_order_does_not_matter() {
        let mut a = HashMap::new();
        let mut b = HashMap::new();
        for (k, v) in [("x", 1), ("a", 2), ("m", 3)] {
            a.insert(k, v);
        }
        for (k, v) in [("m", 3), ("x", 1), ("a", 2)] {
            b.insert(k, v);
        }
        assert_eq!(canonical_json(&a), r#"{"a":2,"m":3,"x":1}"#);
        assert_eq!(digest_json(&a), digest_json(&b));
    }
}
