//! Flat `key = value` run files. Keys are the long flag names without dashes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse(text: &str) -> Result<ConfigMap, CliError> {
    let mut out = ConfigMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(CliError::usage(format!("line {}: empty key", lineno + 1)));
        }
        if out.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::usage(format!("line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<ConfigMap, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
pub fn check_keys(map: &ConfigMap, allowed: &[&str]) -> Result<(), CliError> {
    match map.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(CliError::usage(format!(
            "unknown key {k:?} in run file (known: {})",
            allowed.join(", ")
        ))),
        None => Ok(()),
    }
}

pub fn get<T: std::str::FromStr>(map: &ConfigMap, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| CliError::usage(format!("{key} = {v:?}: {e}"))))
        .transpose()
}
