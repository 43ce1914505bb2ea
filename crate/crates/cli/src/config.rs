//! Experiment configuration: `[section]` headers followed by `key = value`
//! lines. `#` and `;` start comments. Keys are unique within a section.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SECTIONS: [&str; 8] = [
    "run", "data", "model", "train", "distill", "active", "ablate", "check",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Config::default();
        let mut current: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::Config(format!("line {}: {msg}", n + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("unterminated section header `{line}`")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(at(format!("unknown section `{name}`")));
                }
                cfg.sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let section = current
                .as_ref()
                .ok_or_else(|| at("key outside of any section".into()))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let map = cfg.sections.get_mut(section).expect("section registered");
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(at(format!("duplicate key `{}`", k.trim())));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn section(&self, section: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.get(section)
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> CliResult<T> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => parse_value(section, key, v),
        }
    }

    pub fn require<T: FromStr>(&self, section: &str, key: &str) -> CliResult<T> {
        let v = self
            .raw(section, key)
            .ok_or_else(|| CliError::Config(format!("missing [{section}] {key}")))?;
        parse_value(section, key, v)
    }

    /// Comma-separated list, or `default` when the key is absent.
    pub fn list_or<T: FromStr>(&self, section: &str, key: &str, default: &[T]) -> CliResult<Vec<T>>
    where
        T: Clone,
    {
        match self.raw(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_value(section, key, s))
                .collect(),
        }
    }

    /// Canonical text: sections and keys in sorted order.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (name, map) in &self.sections {
            let _ = writeln!(out, "[{name}]");
            for (k, v) in map {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::Config(format!("[{section}] {key}: cannot parse `{v}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let c = Config::parse("# top\n[run]\nseed = 7 ; inline\n\n[train]\nlr_grid = 0.1, 0.01\n").unwrap();
        assert_eq!(c.require::<u64>("run", "seed").unwrap(), 7);
        assert_eq!(c.list_or::<f64>("train", "lr_grid", &[]).unwrap(), vec![0.1, 0.01]);
        assert_eq!(c.get_or("train", "epochs", 3usize).unwrap(), 3);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Config::parse("seed = 1").is_err());
        assert!(Config::parse("[nope]").is_err());
        assert!(Config::parse("[run]\nseed").is_err());
        assert!(Config::parse("[run]\nseed=1\nseed=2").is_err());
        assert!(Config::parse("[run]\nseed = x").unwrap().require::<u64>("run", "seed").is_err());
    }

    #[test]
    fn hash_ignores_layout() {
        let a = Config::parse("[train]\nb=2\na=1\n[run]\nseed=3").unwrap();
        let b = Config::parse("[run]\n  seed = 3\n[train]\na = 1 # x\nb = 2").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = b.clone();
        c.set("run", "seed", "4");
        assert_ne!(a.hash(), c.hash());
    }
}
