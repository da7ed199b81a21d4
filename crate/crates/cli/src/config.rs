//! `key = value` run configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys use the long flag names;
//! dashes and underscores are interchangeable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use crate::UsageError;

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
}

fn canonical(key: &str) -> String {
    key.trim().replace('-', "_").to_ascii_lowercase()
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(format!("line {}: expected key = value", n + 1));
            };
            values.insert(canonical(k), v.trim().to_string());
        }
        Ok(Self { values, source: None })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&canonical(key)).map(String::as_str)
    }

    /// Parsed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(s) => match s.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => {
                    let from = self.source.as_ref().map_or_else(String::new, |p| format!(" in {}", p.display()));
                    bail!(UsageError(format!("bad value `{s}` for `{key}`{from}: {e}")))
                }
            },
        }
    }

    /// `flag` if given, else the config value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let cfg = Config::parse("# run\nn-outer = 5\n\nseed=7 # trailing\ntopology = 2p2\n").unwrap();
        assert_eq!(cfg.get::<usize>("n_outer").unwrap(), Some(5));
        assert_eq!(cfg.pick(Some(9u64), "seed", 0).unwrap(), 9);
        assert_eq!(cfg.pick(None, "seed", 0u64).unwrap(), 7);
        assert_eq!(cfg.pick(None, "missing", 3u64).unwrap(), 3);
        assert_eq!(cfg.raw("TOPOLOGY"), Some("2p2"));
    }

    #[test]
    fn rejects_malformed_lines_and_values() {
        assert!(Config::parse("just words").is_err());
        let cfg = Config::parse("seed = x").unwrap();
        assert!(cfg.get::<u64>("seed").is_err());
    }
}
