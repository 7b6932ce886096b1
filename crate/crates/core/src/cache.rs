//! Content-addressed memoization of expensive solves.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Storage backend keyed by hex SHA-256 digests.
pub trait ResultCache: Sync {
    fn load(&self, key: &str) -> Option<String>;
    fn store(&self, key: &str, payload: &str);
}

/// Hex SHA-256 of the canonical JSON encoding of `material`.
pub fn content_key(material: &impl Serialize) -> String {
    let json = serde_json::to_string(material).expect("cache key material serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Returns the cached value for `material`, or computes and stores it.
pub fn memoize<T, E>(
    cache: Option<&dyn ResultCache>,
    material: &impl Serialize,
    compute: impl FnOnce() -> Result<T, E>,
) -> Result<T, E>
where
    T: Serialize + DeserializeOwned,
{
    let Some(cache) = cache else {
        return compute();
    };
    let key = content_key(material);
    if let Some(text) = cache.load(&key) {
        if let Ok(v) = serde_json::from_str(&text) {
            return Ok(v);
        }
    }
    let value = compute()?;
    if let Ok(text) = serde_json::to_string(&value) {
        cache.store(&key, &text);
    }
    Ok(value)
}
