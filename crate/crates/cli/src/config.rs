//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Values given on the
//! command line take precedence over the file, which takes precedence over
//! built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

pub const KEYS: &[&str] = &[
    "scorer",
    "endpoint",
    "gazetteer",
    "combination",
    "threshold",
    "retrieval",
    "carryover",
    "jobs",
    "retries",
    "timeout_secs",
    "max_in_flight",
    "dropout_rate",
    "seed",
    "theta",
];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(anyhow!("line {}: unknown key '{key}'", i + 1));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag if given, else the parsed file value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.raw(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow!("config key '{key}': cannot parse '{raw}': {e}")),
            None => Ok(default),
        }
    }

    pub fn resolve_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|e| anyhow!("config key '{key}': cannot parse '{raw}': {e}"))
            })
            .transpose()
    }
}
