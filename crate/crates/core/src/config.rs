//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. `include <path>`
//! splices another file in place; relative paths resolve against the
//! including file's directory. Later assignments override earlier ones.
//! Keys listed in [`ConfigFile::take_all`] may repeat and accumulate.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct Entry {
    values: Vec<String>,
    location: String,
}

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, Entry>,
    consumed: HashSet<String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut stack = Vec::new();
        cfg.load_into(path, &mut stack)?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut stack = Vec::new();
        cfg.parse_into(text, origin, None, &mut stack)?;
        Ok(cfg)
    }

    fn load_into(&mut self, path: &Path, stack: &mut Vec<PathBuf>) -> Result<()> {
        let canon = path.canonicalize().map_err(|e| Error::Config {
            location: path.display().to_string(),
            reason: format!("cannot open: {e}"),
        })?;
        if stack.contains(&canon) {
            return Err(Error::Config { location: path.display().to_string(), reason: "include cycle".into() });
        }
        let text = std::fs::read_to_string(&canon)?;
        stack.push(canon.clone());
        let dir = canon.parent().map(Path::to_path_buf);
        self.parse_into(&text, &path.display().to_string(), dir.as_deref(), stack)?;
        stack.pop();
        Ok(())
    }

    fn parse_into(&mut self, text: &str, origin: &str, dir: Option<&Path>, stack: &mut Vec<PathBuf>) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let location = format!("{origin}:{}", lineno + 1);
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("include ") {
                let target = PathBuf::from(rest.trim());
                let target = match (target.is_relative(), dir) {
                    (true, Some(d)) => d.join(target),
                    _ => target,
                };
                self.load_into(&target, stack)?;
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config { location, reason: format!("expected key = value, got {line:?}") });
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::Config { location, reason: format!("bad key {key:?}") });
            }
            let entry = self.entries.entry(key.to_string()).or_insert(Entry { values: Vec::new(), location: String::new() });
            entry.values.push(v.trim().to_string());
            entry.location = location;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), Entry { values: vec![value.to_string()], location: "override".into() });
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Last value assigned to `key`, marking it consumed.
    pub fn take(&mut self, key: &str) -> Option<(String, String)> {
        let e = self.entries.get(key)?;
        self.consumed.insert(key.to_string());
        Some((e.values.last().cloned().unwrap_or_default(), e.location.clone()))
    }

    /// Every value assigned to a repeatable key, in file order.
    pub fn take_all(&mut self, key: &str) -> Vec<String> {
        match self.entries.get(key) {
            Some(e) => {
                self.consumed.insert(key.to_string());
                e.values.clone()
            }
            None => Vec::new(),
        }
    }

    pub fn get<V: FromStr>(&mut self, key: &str) -> Result<Option<V>> {
        match self.take(key) {
            None => Ok(None),
            Some((raw, location)) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config { location, reason: format!("cannot parse {raw:?} for {key}") }),
        }
    }

    pub fn get_or<V: FromStr>(&mut self, key: &str, default: V) -> Result<V> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&mut self, key: &str) -> Result<V> {
        self.get(key)?.ok_or_else(|| Error::Config { location: "config".into(), reason: format!("missing required key {key}") })
    }

    /// Whitespace- or comma-separated list of numbers.
    pub fn get_vec(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((raw, location)) => parse_numbers(&raw).map(Some).map_err(|reason| Error::Config { location, reason }),
        }
    }

    /// Fail if any key was never read.
    pub fn reject_unknown(&self) -> Result<()> {
        for (k, e) in &self.entries {
            if !self.consumed.contains(k) {
                return Err(Error::Config { location: e.location.clone(), reason: format!("unknown key {k}") });
            }
        }
        Ok(())
    }
}

pub fn parse_numbers(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}
