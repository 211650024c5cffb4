//! Plain-text `key = value` documents used for config files and CLI output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered `key = value` pairs. `#` starts a comment; blank lines are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parses the value under `key`, if present.
    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::InvalidConfig(format!("{key} = {v}: {e}")))
            })
            .transpose()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for KeyValues {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let kv = KeyValues::parse("# scenario\nl = 10\n\nm=50 # far end\nalpha = 2.5\n").unwrap();
        assert_eq!(kv.get("l"), Some("10"));
        assert_eq!(kv.get("m"), Some("50"));
        assert_eq!(kv.get_parsed::<f64>("alpha").unwrap(), Some(2.5));
        assert_eq!(kv.get_parsed::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn rejects_lines_without_separator() {
        let err = KeyValues::parse("l = 10\nnonsense\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn reports_bad_values() {
        let kv = KeyValues::parse("l = ten").unwrap();
        assert!(kv.get_parsed::<f64>("l").is_err());
    }

    #[test]
    fn display_round_trips() {
        let mut kv = KeyValues::new();
        kv.insert("j_star", 16.5);
        kv.insert("noise", f64::NEG_INFINITY);
        let back = KeyValues::parse(&kv.to_string()).unwrap();
        assert_eq!(back, kv);
        assert_eq!(back.get_parsed::<f64>("noise").unwrap(), Some(f64::NEG_INFINITY));
    }
}
