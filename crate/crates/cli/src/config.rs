//! Flat `key = value` run configuration with `--key value` overrides.
//!
//! Each command declares its keys and defaults. Values come from, in order of
//! precedence: command-line overrides, the config file, `A3GN_SEED` (for
//! `seed` only), then the defaults. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

pub const SEED_ENV: &str = "A3GN_SEED";
pub const ECHO_FILE: &str = "config.txt";

/// Fully resolved settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// `foo-bar` and `foo_bar` name the same key.
fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{origin}:{}: expected `key = value`, got {raw:?}", n + 1)))?;
        out.push((normalize(k), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits `--key value` / `--key=value` / bare `--flag` tokens into pairs.
/// A bare flag followed by another `--` token (or nothing) means `true`.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let key = a.strip_prefix("--").ok_or_else(|| usage(format!("unexpected argument {a:?}; options look like --key value")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((normalize(k), v.to_string()));
            i += 1;
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.push((normalize(key), args[i + 1].clone()));
            i += 2;
        } else {
            out.push((normalize(key), "true".to_string()));
            i += 1;
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(
        command: &str,
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        overrides: &[String],
        env_seed: Option<String>,
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = defaults.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let check = |k: &str, origin: &str| -> Result<(), CliError> {
            if defaults.iter().any(|(d, _)| *d == k) {
                Ok(())
            } else {
                let known: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
                Err(usage(format!("unknown key {k:?} in {origin} for `{command}`; known keys: {}", known.join(", "))))
            }
        };
        if let (Some(seed), true) = (env_seed, values.contains_key("seed")) {
            values.insert("seed".into(), seed);
        }
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            let origin = path.display().to_string();
            for (k, v) in parse_text(&text, &origin)? {
                if k == "command" {
                    if v != command {
                        return Err(usage(format!("{origin} was written for `{v}`, not `{command}`")));
                    }
                    continue;
                }
                check(&k, &origin)?;
                values.insert(k, v);
            }
        }
        for (k, v) in parse_overrides(overrides)? {
            check(&k, "the command line")?;
            values.insert(k, v);
        }
        Ok(Self { command: command.to_string(), values })
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key {key:?} not declared for {}", self.command))
    }

    pub fn str(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    fn parsed<V: std::str::FromStr>(&self, key: &str, what: &str) -> Result<V, CliError> {
        let v = self.raw(key);
        v.parse().map_err(|_| usage(format!("{key} must be {what}, got {v:?}")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parsed(key, "a non-negative integer")
    }

    /// Empty means "keep the preset".
    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        if self.raw(key).is_empty() {
            return Ok(None);
        }
        self.usize(key).map(Some)
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.parsed(key, "a number")
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(usage(format!("{key} must be true or false, got {v:?}"))),
        }
    }

    /// Empty means unset.
    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.opt_path(key).ok_or_else(|| usage(format!("`{}` needs --{} <path>", self.command, key.replace('_', "-"))))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Writes the resolved config next to the command's outputs.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Core(a3gn::Error::io(format!("creating {}", dir.display()), e)))?;
        let p = dir.join(ECHO_FILE);
        fs::write(&p, self.to_text()).map_err(|e| CliError::Core(a3gn::Error::io(format!("writing {}", p.display()), e)))?;
        Ok(p)
    }
}
