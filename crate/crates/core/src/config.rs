//! `key=value` configuration text: parsing, canonical rendering and hashing.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type KeyValues = BTreeMap<String, String>;

/// Parse `key = value` lines; `#` starts a comment. Duplicate keys are errors.
pub fn parse_kv(text: &str) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got `{line}`", no + 1))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key `{k}`",
                no + 1
            )));
        }
    }
    Ok(out)
}

/// One `key=value` line per entry, sorted by key.
pub fn render_kv(kv: &KeyValues) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Hex SHA-256 of the canonical rendering; independent of input key order.
pub fn hash_kv(kv: &KeyValues) -> String {
    let digest = Sha256::digest(render_kv(kv).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

/// Settings groups that read and write their own keys.
pub trait Settings {
    /// Apply one key; `Ok(false)` when the key is not recognized.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
    fn entries(&self) -> Vec<(String, String)>;
    fn validate(&self) -> Result<()>;

    /// Apply every entry, rejecting unknown keys.
    fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        for (k, v) in kv {
            if !self.set(k, v)? {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        self.validate()
    }

    fn to_kv(&self) -> KeyValues {
        self.entries().into_iter().collect()
    }
}

/// `(key, value.to_string())`.
pub fn entry(key: &str, value: impl Display) -> (String, String) {
    (key.to_string(), value.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_order_and_comments() {
        let a = parse_kv("b = 2\na=1 # one\n\n").unwrap();
        let b = parse_kv("# header\na=1\nb=2").unwrap();
        assert_eq!(hash_kv(&a), hash_kv(&b));
        assert_eq!(hash_kv(&a).len(), 64);
        assert_eq!(parse_kv(&render_kv(&a)).unwrap(), a);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_kv("novalue").is_err());
        assert!(parse_kv("a=1\na=2").is_err());
        assert!(parse_kv("=3").is_err());
        assert!(parse_value::<f64>("x", "abc").is_err());
    }
}
