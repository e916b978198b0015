//! `key = value` config files merged under command-line flags.
//!
//! Blank lines and `#` comments are ignored. A key is a long flag name
//! (underscores and dashes are interchangeable), optionally qualified by a
//! subcommand as `train.epochs = 10`. Qualified keys win over plain ones and
//! flags given on the command line win over both.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::Command;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    /// `(section, key) -> value`; the section is empty for plain keys.
    entries: BTreeMap<(String, String), String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", n + 1)))?;
            let key = normalize(key);
            let (section, key) = match key.split_once('.') {
                Some((s, k)) => (s.to_owned(), k.to_owned()),
                None => (String::new(), key),
            };
            if key.is_empty() {
                return Err(CliError::usage(format!("config line {}: empty key", n + 1)));
            }
            let value = value.trim().to_owned();
            if entries.insert((section, key.clone()), value).is_some() {
                return Err(CliError::usage(format!("config line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    /// Values that apply to `subcommand`, qualified keys taking precedence.
    pub fn resolve(&self, subcommand: &str) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for ((section, key), value) in &self.entries {
            if section.is_empty() {
                out.entry(key.clone()).or_insert_with(|| value.clone());
            } else if section == subcommand {
                out.insert(key.clone(), value.clone());
            }
        }
        out
    }
}

/// Long flags of a subcommand (plus globals) and whether each takes a value.
fn flags_of(cmd: &Command) -> BTreeMap<String, bool> {
    cmd.get_arguments()
        .filter_map(|a| {
            let long = a.get_long()?;
            Some((long.to_owned(), a.get_action().takes_values()))
        })
        .collect()
}

fn flag_given(args: &[OsString], flag: &str) -> bool {
    let exact = format!("--{flag}");
    let prefix = format!("--{flag}=");
    args.iter().any(|a| {
        let a = a.to_string_lossy();
        a == exact || a.starts_with(&prefix)
    })
}

/// Finds `--config PATH` or `--config=PATH` in raw arguments.
pub fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Appends config values for flags missing from `args`. Keys unknown to
/// every subcommand are rejected; keys for other subcommands are skipped.
pub fn merge_into_args(cmd: &Command, args: Vec<OsString>, config: &ConfigFile) -> CliResult<Vec<OsString>> {
    let globals = flags_of(cmd);
    let subcommands: BTreeMap<String, BTreeMap<String, bool>> = cmd
        .get_subcommands()
        .map(|s| (s.get_name().to_owned(), flags_of(s)))
        .collect();
    for (section, key) in config.entries.keys() {
        let known = if section.is_empty() {
            globals.contains_key(key) || subcommands.values().any(|f| f.contains_key(key))
        } else {
            subcommands.get(section).is_some_and(|f| f.contains_key(key)) || globals.contains_key(key)
        };
        if !known || key == "config" {
            let shown = if section.is_empty() { key.clone() } else { format!("{section}.{key}") };
            return Err(CliError::usage(format!("unknown config key `{shown}`")));
        }
    }
    let Some(sub) = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .find(|a| subcommands.contains_key(a))
    else {
        return Ok(args);
    };
    let mut flags = globals;
    flags.extend(subcommands[&sub].clone());
    let mut out = args;
    for (key, value) in config.resolve(&sub) {
        let Some(&takes_value) = flags.get(&key) else {
            continue;
        };
        if flag_given(&out, &key) {
            continue;
        }
        if takes_value {
            out.push(format!("--{key}").into());
            out.push(value.into());
        } else {
            match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => {
                    return Err(CliError::usage(format!(
                        "config key `{key}` is a switch and takes true or false"
                    )))
                }
            }
        }
    }
    Ok(out)
}
