//! Flat `key=value` config files and per-field provenance.
//!
//! Every setting resolves from exactly one source: a command-line flag, the
//! `--config` file, or the built-in default, in that order of precedence.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Flag,
}

#[derive(Debug, Clone, Serialize)]
pub struct Field {
    pub value: String,
    pub source: Source,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub command: String,
    pub fields: BTreeMap<String, Field>,
}

impl ResolvedConfig {
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

/// Parses `key=value` lines. Blank lines and lines starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(UsageError(format!("config line {}: expected key=value", lineno + 1)).into());
        };
        out.insert(normalize(key), value.trim().to_string());
    }
    Ok(out)
}

pub struct Resolver {
    command: String,
    file: BTreeMap<String, String>,
    fields: BTreeMap<String, Field>,
}

impl Resolver {
    pub fn new(command: &str, config: Option<&Path>) -> Result<Self> {
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            command: command.to_string(),
            file,
            fields: BTreeMap::new(),
        })
    }

    /// Resolves one setting. `flag` wins over the config file, which wins over `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let (value, source) = match (flag, self.file.get(key)) {
            (Some(v), _) => (v, Source::Flag),
            (None, Some(raw)) => match raw.parse::<T>() {
                Ok(v) => (v, Source::File),
                Err(e) => return Err(UsageError(format!("config key `{key}`: {e}")).into()),
            },
            (None, None) => (default, Source::Default),
        };
        self.fields.insert(
            key.to_string(),
            Field {
                value: value.to_string(),
                source,
            },
        );
        Ok(value)
    }

    /// Records a value that is not overridable from the config file, such as the input path.
    pub fn record(&mut self, key: &str, value: impl Display) {
        self.fields.insert(
            key.to_string(),
            Field {
                value: value.to_string(),
                source: Source::Flag,
            },
        );
    }

    /// Fails if the config file set keys this command does not know.
    pub fn finish(self) -> Result<ResolvedConfig> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.fields.contains_key(*k)).collect();
        if !unknown.is_empty() {
            bail!(UsageError(format!(
                "unknown config keys for `{}`: {}",
                self.command,
                unknown.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(ResolvedConfig {
            command: self.command,
            fields: self.fields,
        })
    }
}

/// Comma-separated list wrapper so lists resolve like scalar settings.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}
