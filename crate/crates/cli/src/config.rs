//! Config-file loading, flag overlay and seed derivation.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Reads a config document. A run manifest is accepted as well, in which
/// case its `config` member is used.
pub fn load(path: &Path, subcommand: &str) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut doc: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if let Some(sub) = doc.get("subcommand").and_then(Value::as_str) {
        if sub != subcommand {
            bail!("config {} is for subcommand {sub:?}, not {subcommand:?}", path.display());
        }
    }
    if let Some(inner) = doc.get("config") {
        doc = inner.clone();
    }
    let Value::Object(mut map) = doc else {
        bail!("config {} must be a JSON object", path.display());
    };
    map.remove("subcommand");
    Ok(Value::Object(map))
}

/// Flags override file values; unset flags keep the file value.
pub fn overlay<T: Serialize + DeserializeOwned>(flags: &T, file: Option<Value>) -> Result<T> {
    let mut base = match file {
        Some(Value::Object(m)) => m,
        _ => Map::new(),
    };
    if let Value::Object(f) = serde_json::to_value(flags)? {
        for (k, v) in f {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(base)).context("invalid configuration")
}

/// Seed derived from the SHA-256 of the canonical JSON of a config.
pub fn hash_seed<T: Serialize>(cfg: &T) -> Result<u64> {
    // serde_json maps are ordered by key, so the encoding is canonical
    let v: Value = serde_json::to_value(cfg)?;
    let digest = Sha256::digest(serde_json::to_vec(&v)?);
    Ok(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Comma-separated list of numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("not a number: {t:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Serialize, Deserialize, Default, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Cfg {
        x: Option<f64>,
        n: Option<usize>,
    }

    #[test]
    fn flags_override_file_values() {
        let file = serde_json::json!({"x": 1.0, "n": 3});
        let got: Cfg = overlay(&Cfg { x: Some(2.0), n: None }, Some(file)).unwrap();
        assert_eq!(got, Cfg { x: Some(2.0), n: Some(3) });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file = serde_json::json!({"y": 1.0});
        assert!(overlay(&Cfg::default(), Some(file)).is_err());
    }

    #[test]
    fn seed_depends_on_the_config() {
        let a = hash_seed(&Cfg { x: Some(1.0), n: None }).unwrap();
        let b = hash_seed(&Cfg { x: Some(1.5), n: None }).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, hash_seed(&Cfg { x: Some(1.0), n: None }).unwrap());
    }
}
