//! Line-oriented key=value files: manifests, configs, checkpoint headers.
//!
//! One `key=value` per line, `#` starts a comment, blank lines ignored.
//! Duplicate keys are an error so experiment records stay unambiguous.

use crate::error::{Error, Result};
use std::collections::BTreeSet;
use std::path::Path;

pub fn parse_str(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: format!("expected key=value, got {raw:?}"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: "empty key".to_string(),
            });
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                msg: format!("duplicate key {key}"),
            });
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_str(&text, &path.display().to_string())
}

pub fn render(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Typed lookup helpers over parsed pairs.
pub struct KvReader<'a> {
    pairs: &'a [(String, String)],
    origin: String,
}

impl<'a> KvReader<'a> {
    pub fn new(pairs: &'a [(String, String)], origin: impl Into<String>) -> Self {
        KvReader {
            pairs,
            origin: origin.into(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&'a str> {
        self.get(key).ok_or_else(|| {
            Error::Config(format!("missing key {key} in {}", self.origin))
        })
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            Error::Config(format!(
                "key {key} in {}: cannot parse {raw:?}",
                self.origin
            ))
        })
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!(
                    "key {key} in {}: cannot parse {raw:?}",
                    self.origin
                ))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let pairs = parse_str("# header\n\na=1\nb = two \n", "test").unwrap();
        assert_eq!(
            pairs,
            vec![
                ("a".to_string(), "1".to_string()),
                ("b".to_string(), "two".to_string())
            ]
        );
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = parse_str("a=1\na=2\n", "test").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert!(err.to_string().contains("test:2"));
    }

    #[test]
    fn missing_equals_reports_line() {
        let err = parse_str("a=1\nnot a pair\n", "cfg").unwrap_err();
        assert!(err.to_string().contains("cfg:2"));
    }
}
