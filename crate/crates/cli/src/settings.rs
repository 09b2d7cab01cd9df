//! `key = value` configuration files merged with command-line flags.
//!
//! A flag always wins over the file, the file over the built-in default.
//! Every resolved value is recorded so the effective configuration can be
//! written back out and fed to `--config` to repeat the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const ECHO_FILE: &str = "run_config.txt";

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    origin: Option<PathBuf>,
    used: BTreeSet<String>,
    echo: Vec<(String, String)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut s = Settings::parse(&text, &path.display().to_string())?;
        s.origin = Some(path.to_path_buf());
        Ok(s)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            let key = k.trim().replace('-', "_");
            if file.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!("{origin}:{}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(Settings {
            file,
            ..Default::default()
        })
    }

    fn from_file<T>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                let origin = self.origin.as_deref().map_or("config".into(), |p| p.display().to_string());
                CliError::Usage(format!("{origin}: bad value {raw:?} for {key}: {e}"))
            }),
        }
    }

    fn record(&mut self, key: &str, value: String) {
        self.echo.push((key.to_string(), value));
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.used.insert(key.to_string());
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.record(key, v.to_string());
        }
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file::<PathBuf>(key)?,
        };
        if let Some(p) = &v {
            self.record(key, p.display().to_string());
        }
        Ok(v)
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.path(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing --{} (or `{key} = ...` in the config file)", key.replace('_', "-"))))
    }

    /// Rejects keys the command never asked for and renders the echo.
    pub fn finish(mut self, command: &str) -> Result<String, CliError> {
        if let Some(c) = self.file.remove("command") {
            if c != command {
                return Err(CliError::Usage(format!("config file is for `{c}`, not `{command}`")));
            }
        }
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::Usage(format!("unknown config keys for `{command}`: {unknown:?}")));
        }
        let mut out = format!("command = {command}\n");
        for (k, v) in &self.echo {
            let _ = writeln!(out, "{k} = {v}");
        }
        Ok(out)
    }
}
