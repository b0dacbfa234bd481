//! Plain `key = value` configuration. Command-line flags override the file,
//! which overrides built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, (usize, String)>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((k, v)) = t.split_once('=') else {
                return Err(Error::parse(i + 1, format!("expected `key = value`, got `{t}`")));
            };
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::parse(i + 1, "empty key"));
            }
            if values.insert(k.to_string(), (i + 1, v.trim().to_string())).is_some() {
                return Err(Error::parse(i + 1, format!("duplicate key `{k}`")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Usage(format!("config line {line}: invalid value `{v}` for {key}"))),
        }
    }

    /// Flag, else config entry, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Flag, else config entry; missing in both is a usage error.
    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => self.get(key)?.ok_or_else(|| Error::Usage(format!("missing --{key}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let c = Config::parse("# detection\nabs-threshold = 0.05\nseed=3\n").unwrap();
        assert_eq!(c.resolve(Some(0.1), "abs-threshold", 0.04).unwrap(), 0.1);
        assert_eq!(c.resolve(None, "abs-threshold", 0.04).unwrap(), 0.05);
        assert_eq!(c.resolve(None, "proximity", 3.0).unwrap(), 3.0);
        assert_eq!(c.resolve::<u64>(None, "seed", 0).unwrap(), 3);
        assert!(c.require::<f64>(None, "square-size").is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Config::parse("seed\n").is_err());
        assert!(Config::parse("a = 1\na = 2\n").is_err());
        let c = Config::parse("seed = x\n").unwrap();
        assert!(c.get::<u64>("seed").is_err());
    }
}
