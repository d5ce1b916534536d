//! `key = value` run configuration: defaults, then an optional file, then flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

/// Resolved settings of one command. Keys are fixed per command; unknown keys
/// in a config file are rejected.
#[derive(Debug, Clone)]
pub struct RunConfig {
    command: &'static str,
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    pub fn new(command: &'static str, defaults: &[(&'static str, &str)]) -> Self {
        let values = defaults.iter().map(|(k, v)| (*k, v.to_string())).collect();
        RunConfig { command, values }
    }

    fn key(&self, name: &str) -> CliResult<&'static str> {
        self.values
            .keys()
            .find(|k| **k == name)
            .copied()
            .ok_or_else(|| CliError::Config(format!("unknown key {name:?} for `{}`", self.command)))
    }

    /// Overlays a config file.
    pub fn load_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
            let key = self.key(k.trim())?;
            self.values.insert(key, v.trim().to_string());
        }
        Ok(())
    }

    /// Overlays one command-line flag when it was given.
    pub fn flag<T: Display>(&mut self, name: &str, value: &Option<T>) -> CliResult<()> {
        if let Some(v) = value {
            let key = self.key(name)?;
            self.values.insert(key, v.to_string());
        }
        Ok(())
    }

    pub fn switch(&mut self, name: &str, on: bool) -> CliResult<()> {
        if on {
            let key = self.key(name)?;
            self.values.insert(key, "true".into());
        }
        Ok(())
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, name: &str) -> CliResult<T> {
        let raw = self.raw(name);
        raw.parse()
            .map_err(|_| CliError::Config(format!("key {name:?}: cannot parse {raw:?}")))
    }

    pub fn path(&self, name: &str) -> CliResult<PathBuf> {
        let raw = self.raw(name);
        if raw.is_empty() {
            return Err(CliError::Config(format!("key {name:?} is required")));
        }
        Ok(PathBuf::from(raw))
    }

    pub fn optional_path(&self, name: &str) -> Option<PathBuf> {
        let raw = self.raw(name);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn flag_set(&self, name: &str) -> CliResult<bool> {
        self.get(name)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# resolved configuration of `radiomap {}`\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Writes the resolved settings to `path`.
    pub fn save(&self, path: &Path) -> CliResult<()> {
        radiomap_core::formats::write_file(path, self.to_text().as_bytes())?;
        Ok(())
    }
}
