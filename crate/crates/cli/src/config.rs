//! Flat `key = value` configuration with defaults, file values and flag
//! overrides, in increasing precedence.

use crate::error::CliError;
use rfdlab_core::kernels::{Family, StationaryKernel};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Keys accepted by every subcommand.
const GLOBAL: &[(&str, &str)] = &[("seed", "0"), ("out", ".")];

/// Keys that do not change results and stay out of the digest.
const UNHASHED: &[&str] = &["out"];

#[derive(Debug, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str, known: &BTreeMap<String, String>) -> Result<(), String> {
    if known.contains_key(key) {
        Ok(())
    } else {
        let list: Vec<&str> = known.keys().map(|k| k.as_str()).collect();
        Err(format!("unknown key '{key}' (known: {})", list.join(", ")))
    }
}

impl Config {
    /// Merges `defaults`, then the optional file, then `overrides`
    /// (`key=value` strings).
    pub fn load(
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        overrides: &[String],
    ) -> Result<Config, CliError> {
        let mut values: BTreeMap<String, String> =
            GLOBAL.iter().chain(defaults).map(|(k, v)| (k.to_string(), v.to_string())).collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let mut seen = BTreeMap::new();
            for (i, raw) in text.lines().enumerate() {
                let line_no = i + 1;
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let err = |msg: String| CliError::Config(format!("{}:{line_no}: {msg}", path.display()));
                let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
                let (k, v) = (k.trim(), v.trim());
                check_key(k, &values).map_err(err)?;
                if let Some(prev) = seen.insert(k.to_string(), line_no) {
                    return Err(err(format!("key '{k}' already set on line {prev}")));
                }
                values.insert(k.to_string(), v.to_string());
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
            let k = k.trim();
            check_key(k, &values).map_err(|m| CliError::Config(format!("--set: {m}")))?;
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.str(key);
        v.parse().map_err(|_| CliError::Config(format!("{key} = '{v}' is not a valid {}", std::any::type_name::<T>())))
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.str(key).split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    }

    pub fn positive(&self, key: &str) -> Result<f64, CliError> {
        let x: f64 = self.parse(key)?;
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(CliError::Config(format!("{key} must be positive, got {x}")))
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let p = PathBuf::from(self.str("out"));
        std::fs::create_dir_all(&p)?;
        Ok(p)
    }

    pub fn family(&self, key: &str) -> Result<Family, CliError> {
        let v = self.str(key);
        Family::parse(v).ok_or_else(|| CliError::Config(format!("{key} = '{v}': unknown kernel family")))
    }

    /// Kernel from the `family`, `variance`, `s` and `beta` keys.
    pub fn kernel(&self) -> Result<StationaryKernel, CliError> {
        let f = self.family("family")?;
        Ok(StationaryKernel::new(f, self.parse("variance")?, self.parse("s")?, self.parse("beta")?)?)
    }

    /// SHA-256 over the sorted `key=value` lines of every result-relevant key.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if !UNHASHED.contains(&k.as_str()) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
