//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may carry a dotted
//! prefix (`stage2.num_rounds`) to scope a setting.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gbdt::TrainConfig;
use crate::scalar::Scalar;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", no + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Removes `key` and parses its value.
    pub fn take<V: FromStr>(&mut self, key: &str) -> Result<Option<V>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("cannot parse {key} = '{raw}'"))),
        }
    }

    /// Fails if any key was left unconsumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::Config(format!("unknown config key '{k}'"))),
            None => Ok(()),
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Overwrites fields of `cfg` from `{prefix}{key}` entries, consuming them.
pub fn apply_train<T: Scalar>(cfg: &mut TrainConfig<T>, kv: &mut KvConfig, prefix: &str) -> Result<()> {
    let key = |k: &str| format!("{prefix}{k}");
    if let Some(v) = kv.take(&key("num_rounds"))? {
        cfg.num_rounds = v;
    }
    if let Some(v) = kv.take(&key("max_depth"))? {
        cfg.max_depth = v;
    }
    if let Some(v) = kv.take(&key("learning_rate"))? {
        cfg.learning_rate = v;
    }
    if let Some(v) = kv.take(&key("lambda"))? {
        cfg.lambda = v;
    }
    if let Some(v) = kv.take(&key("min_child_weight"))? {
        cfg.min_child_weight = v;
    }
    if let Some(v) = kv.take(&key("min_gain"))? {
        cfg.min_gain = v;
    }
    if let Some(v) = kv.take(&key("seed"))? {
        cfg.seed = v;
    }
    Ok(())
}

pub fn write_train<T: Scalar>(cfg: &TrainConfig<T>, kv: &mut KvConfig, prefix: &str) {
    kv.set(format!("{prefix}num_rounds"), cfg.num_rounds);
    kv.set(format!("{prefix}max_depth"), cfg.max_depth);
    kv.set(format!("{prefix}learning_rate"), cfg.learning_rate);
    kv.set(format!("{prefix}lambda"), cfg.lambda);
    kv.set(format!("{prefix}min_child_weight"), cfg.min_child_weight);
    kv.set(format!("{prefix}min_gain"), cfg.min_gain);
    kv.set(format!("{prefix}seed"), cfg.seed);
}
