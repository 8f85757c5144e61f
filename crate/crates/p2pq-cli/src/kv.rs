//! Flat `key = value` config files mirroring the command-line flags.

use crate::CliError;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Default)]
pub struct KvConfig {
    entries: HashMap<String, String>,
}

impl KvConfig {
    /// Loads a config file; `None` yields an empty config. Blank lines and
    /// `#` comments are ignored, later keys win.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                entries.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Self { entries })
    }

    pub fn string(&self, key: &str) -> Option<String> {
        self.entries.get(key).cloned()
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| CliError::Invalid(format!("bad value for `{key}`: `{v}`")))
            })
            .transpose()
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<u64>()
                    .map_err(|_| CliError::Invalid(format!("bad value for `{key}`: `{v}`")))
            })
            .transpose()
    }
}
