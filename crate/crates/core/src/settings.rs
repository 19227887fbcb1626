//! `key=value` configuration files with environment-variable overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! case-insensitive and normalized to lowercase with `-` mapped to `_`. An
//! environment variable `<PREFIX><KEY>` (key uppercased) overrides the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("invalid value for {key}: {value:?}")]
    Value { key: String, value: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

/// Parsed settings, keyed by normalized name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, SettingsError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(SettingsError::Syntax { line: i + 1 })?;
            if k.trim().is_empty() {
                return Err(SettingsError::Syntax { line: i + 1 });
            }
            values.insert(normalize(k), v.trim().to_owned());
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SettingsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SettingsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Overlays variables named `<prefix><KEY>` for every key in `known`.
    pub fn with_env(mut self, prefix: &str, known: &[&str]) -> Self {
        self.overlay_env(prefix, known, |name| std::env::var(name).ok());
        self
    }

    pub(crate) fn overlay_env(
        &mut self,
        prefix: &str,
        known: &[&str],
        lookup: impl Fn(&str) -> Option<String>,
    ) {
        for key in known {
            let name = format!("{prefix}{}", key.to_ascii_uppercase());
            if let Some(v) = lookup(&name) {
                self.values.insert(normalize(key), v);
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize(key), value.into());
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, SettingsError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| SettingsError::Value {
                key: key.to_owned(),
                value: v.to_owned(),
            }),
        }
    }

    /// Fails on the first key outside `known`.
    pub fn check_known(&self, known: &[&str]) -> Result<(), SettingsError> {
        match self.values.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(SettingsError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }
}
