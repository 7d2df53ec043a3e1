//! `key = value` text configuration.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored. Keys
//! may not repeat within one file.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: Vec<(String, String)>,
}

impl KvConfig {
    pub fn new() -> Self {
        KvConfig::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        let mut offset = 0;
        for raw in text.split_inclusive('\n') {
            let line_start = offset;
            offset += raw.len();
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            };
            if line.trim().is_empty() {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(Error::parse("config", line_start, "expected `key = value`"));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(Error::parse("config", line_start, "invalid key"));
            }
            if cfg.get(key).is_some() {
                return Err(Error::parse(
                    "config",
                    line_start,
                    format!("duplicate key `{key}`"),
                ));
            }
            cfg.entries.push((key.to_string(), value.to_string()));
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parsed value of `key`, if present.
    pub fn get_parsed<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<V>()
                    .map_err(|e| Error::Config(format!("`{key} = {v}`: {e}")))
            })
            .transpose()
    }

    /// Inserts or replaces.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let i = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(i).1)
    }

    /// Values in `other` win.
    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.set(k.clone(), v);
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            Some((k, _)) => Err(Error::Config(format!(
                "unknown key `{k}` (expected one of: {})",
                known.join(", ")
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for KvConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Parses `HxW`, e.g. `512x1024`.
pub fn parse_hw(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("expected HxW, got `{s}`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h = h.trim().parse().map_err(|_| bad())?;
    let w = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects a boolean, got `{v}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = KvConfig::parse("# header\nfamily = pdfnet\n\n depth=6 # trailing\n").unwrap();
        assert_eq!(c.get("family"), Some("pdfnet"));
        assert_eq!(c.get_parsed::<usize>("depth").unwrap(), Some(6));
        assert_eq!(c.get("missing"), None);
    }

    #[test]
    fn errors_carry_byte_offsets() {
        let e = KvConfig::parse("a = 1\nnot a pair\n").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 6, .. }), "{e}");
        let e = KvConfig::parse("a = 1\na = 2\n").unwrap_err();
        assert!(matches!(e, Error::Parse { offset: 6, .. }), "{e}");
        assert!(KvConfig::parse(" = 3").is_err());
    }

    #[test]
    fn display_round_trips() {
        let mut c = KvConfig::new();
        c.set("x", 1);
        c.set("y", "two words");
        c.set("x", 3);
        assert_eq!(KvConfig::parse(&c.to_string()).unwrap(), c);
    }

    #[test]
    fn typed_lookup_reports_key() {
        let c = KvConfig::parse("depth = six").unwrap();
        let e = c.get_parsed::<usize>("depth").unwrap_err().to_string();
        assert!(e.contains("depth"), "{e}");
        assert!(c.reject_unknown(&["family"]).is_err());
    }

    #[test]
    fn hw() {
        assert_eq!(parse_hw("512x1024").unwrap(), (512, 1024));
        assert!(parse_hw("512").is_err());
        assert!(parse_hw("0x4").is_err());
    }
}
