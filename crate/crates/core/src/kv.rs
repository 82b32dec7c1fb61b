//! Flat `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Keys are
//! unique. Values are kept as strings and converted by the consumer.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`: {msg}")]
    BadValue { key: String, value: String, msg: String },
}

/// Ordered key-value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax { line: idx + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(KvError::Syntax { line: idx + 1 });
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(KvError::Duplicate { line: idx + 1, key: k.to_string() });
            }
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses `key` if present.
    pub fn parse_value<V: FromStr>(&self, key: &str) -> Result<Option<V>, KvError>
    where
        V::Err: Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<V>().map_err(|e| KvError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    msg: e.to_string(),
                })
            })
            .transpose()
    }

    /// Fails on the first key outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<(), KvError> {
        match self.entries.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(KvError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }

    /// Overlays `other` on top of `self`.
    pub fn merged(&self, other: &KvMap) -> KvMap {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|(k, v)| (k.clone(), v.clone())));
        KvMap { entries }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let m = KvMap::parse("# header\n\ntile_side = 0.001  # degrees\nseed=7\n").unwrap();
        assert_eq!(m.get("tile_side"), Some("0.001"));
        assert_eq!(m.parse_value::<u64>("seed").unwrap(), Some(7));
        assert_eq!(m.parse_value::<u64>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(KvMap::parse("novalue\n"), Err(KvError::Syntax { line: 1 }));
        assert!(matches!(KvMap::parse("a=1\na=2"), Err(KvError::Duplicate { line: 2, .. })));
        let m = KvMap::parse("seed = x").unwrap();
        assert!(matches!(m.parse_value::<u64>("seed"), Err(KvError::BadValue { .. })));
        assert_eq!(m.check_known(&["other"]), Err(KvError::UnknownKey("seed".into())));
    }

    #[test]
    fn text_round_trip() {
        let mut m = KvMap::default();
        m.insert("b", 2);
        m.insert("a", "x y");
        assert_eq!(KvMap::parse(&m.to_text()).unwrap(), m);
    }
}
