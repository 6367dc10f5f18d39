//! Plain-text `key=value` records, used by config files, the GRD1 metadata
//! block and the AFN1 checkpoint header.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("duplicate key {0:?}")]
    Duplicate(String),
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("key {key:?}: cannot parse {value:?}")]
    Parse { key: String, value: String },
    #[error("unknown key {0:?}")]
    Unknown(String),
}

/// Ordered `key=value` map. Blank lines and lines starting with `#` are
/// ignored when parsing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut map = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| KvError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let key = k.trim().to_string();
            if map.entries.contains_key(&key) {
                return Err(KvError::Duplicate(key));
            }
            map.entries.insert(key, v.trim().to_string());
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        let value = self.raw(key).ok_or_else(|| KvError::Missing(key.to_string()))?;
        value.parse().map_err(|_| KvError::Parse {
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, KvError> {
        match self.raw(key) {
            Some(_) => self.get(key),
            None => Ok(default),
        }
    }

    /// Comma-separated list. An empty value yields an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, KvError> {
        let value = self.raw(key).ok_or_else(|| KvError::Missing(key.to_string()))?;
        parse_csv(value).map_err(|_| KvError::Parse {
            key: key.to_string(),
            value: value.to_string(),
        })
    }

    /// Rejects keys outside `allowed`, so typos in config files surface.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), KvError> {
        match self.entries.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(KvError::Unknown(k.clone())),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

pub fn parse_csv<T: FromStr>(value: &str) -> Result<Vec<T>, T::Err> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| s.trim().parse()).collect()
}

pub fn join_csv<T: Display>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let m = KvMap::parse("# header\nseed = 7\n\nlags=0,6, 12\n").unwrap();
        assert_eq!(m.get::<u64>("seed").unwrap(), 7);
        assert_eq!(m.get_list::<u32>("lags").unwrap(), vec![0, 6, 12]);
        assert_eq!(m.get_or("missing", 3.5).unwrap(), 3.5);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(matches!(KvMap::parse("novalue"), Err(KvError::Syntax { line: 1, .. })));
        assert_eq!(
            KvMap::parse("a=1\na=2"),
            Err(KvError::Duplicate("a".into()))
        );
        let m = KvMap::parse("a=x").unwrap();
        assert!(matches!(m.get::<u32>("a"), Err(KvError::Parse { .. })));
        assert_eq!(m.check_keys(&["b"]), Err(KvError::Unknown("a".into())));
    }
}
