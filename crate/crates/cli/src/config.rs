//! `--config` support.
//!
//! The config file is TOML. Top-level keys are flag names (`top-n` or
//! `top_n`) and apply to every subcommand that has such a flag. Tables named
//! after a subcommand (`[search]`, `[index-build]`) apply to that subcommand
//! only and take precedence over top-level keys. Values are turned into
//! ordinary flags appended to the argument list, skipping any flag the user
//! already gave, so the command line always wins.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::Path;

use clap::{Arg, Command};

use crate::error::UsageError;

struct Scan {
    path: Vec<String>,
    given: BTreeSet<String>,
    config: Option<OsString>,
}

fn find_long<'a>(cmd: &'a Command, long: &str) -> Option<&'a Arg> {
    cmd.get_arguments().find(|a| a.get_long() == Some(long))
}

fn takes_value(arg: Option<&Arg>) -> bool {
    arg.is_some_and(|a| a.get_action().takes_values())
}

fn scan(root: &Command, argv: &[OsString]) -> Scan {
    let mut scan = Scan {
        path: Vec::new(),
        given: BTreeSet::new(),
        config: None,
    };
    let mut cmd = root;
    let mut i = 1;
    while i < argv.len() {
        let tok = argv[i].to_string_lossy();
        if let Some(flag) = tok.strip_prefix("--") {
            let (name, inline) = match flag.split_once('=') {
                Some((n, v)) => (n, Some(v)),
                None => (flag, None),
            };
            let arg = find_long(cmd, name).or_else(|| find_long(root, name));
            let value = match inline {
                Some(v) => Some(OsString::from(v)),
                None if takes_value(arg) => {
                    i += 1;
                    argv.get(i).cloned()
                }
                None => None,
            };
            if name == "config" {
                scan.config = value;
            }
            scan.given.insert(name.to_owned());
        } else if !tok.starts_with('-') {
            if let Some(sub) = cmd.find_subcommand(tok.as_ref()) {
                scan.path.push(sub.get_name().to_owned());
                cmd = sub;
            }
        }
        i += 1;
    }
    scan
}

/// Every leaf subcommand with its config section name (`index-build`).
fn leaves(root: &Command) -> Vec<(String, &Command)> {
    fn walk<'a>(cmd: &'a Command, prefix: &str, out: &mut Vec<(String, &'a Command)>) {
        for sub in cmd.get_subcommands() {
            let name = if prefix.is_empty() {
                sub.get_name().to_owned()
            } else {
                format!("{prefix}-{}", sub.get_name())
            };
            if sub.has_subcommands() {
                walk(sub, &name, out);
            } else {
                out.push((name, sub));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, "", &mut out);
    out
}

fn accepts(cmd: &Command, root: &Command, long: &str) -> bool {
    long != "config" && (find_long(cmd, long).is_some() || find_long(root, long).is_some())
}

fn flag_values(arg: &Arg, long: &str, value: &toml::Value) -> Result<Vec<String>, UsageError> {
    let scalar = |v: &toml::Value| -> Result<String, UsageError> {
        match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(n) => Ok(n.to_string()),
            toml::Value::Float(x) => Ok(x.to_string()),
            toml::Value::Boolean(b) => Ok(b.to_string()),
            _ => Err(UsageError(format!(
                "config key {long:?}: unsupported value {v}"
            ))),
        }
    };
    match value {
        toml::Value::Array(items) => {
            if !matches!(arg.get_action(), clap::ArgAction::Append) {
                return Err(UsageError(format!(
                    "config key {long:?} takes a single value, not a list"
                )));
            }
            items.iter().map(scalar).collect()
        }
        v => Ok(vec![scalar(v)?]),
    }
}

fn load(path: &Path) -> Result<toml::Table, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("--config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| UsageError(format!("--config {}: {e}", path.display())))
}

/// Returns `argv` extended with the values from `--config`, or unchanged if
/// no config file was given.
pub fn merge(root: &Command, mut argv: Vec<OsString>) -> Result<Vec<OsString>, UsageError> {
    let scan = scan(root, &argv);
    let Some(config) = scan.config else {
        return Ok(argv);
    };
    let table = load(Path::new(&config))?;
    let leaves = leaves(root);
    let section = scan.path.join("-");
    let leaf = leaves
        .iter()
        .find(|(name, _)| *name == section)
        .map(|(_, c)| *c);

    let mut values: BTreeMap<String, &toml::Value> = BTreeMap::new();
    let mut sectioned: BTreeMap<String, &toml::Value> = BTreeMap::new();
    for (key, value) in &table {
        if let toml::Value::Table(inner) = value {
            let Some((_, cmd)) = leaves.iter().find(|(name, _)| name == key) else {
                return Err(UsageError(format!("config: unknown section [{key}]")));
            };
            for (k, v) in inner {
                let long = k.replace('_', "-");
                if !accepts(cmd, root, &long) {
                    return Err(UsageError(format!("config [{key}]: unknown key {k:?}")));
                }
                if *key == section {
                    sectioned.insert(long, v);
                }
            }
        } else {
            let long = key.replace('_', "-");
            if !leaves.iter().any(|(_, cmd)| accepts(cmd, root, &long)) {
                return Err(UsageError(format!("config: unknown key {key:?}")));
            }
            values.insert(long, value);
        }
    }
    values.extend(sectioned);

    let Some(leaf) = leaf else {
        // no subcommand: let clap report it
        return Ok(argv);
    };
    for (long, value) in values {
        if scan.given.contains(&long) {
            continue;
        }
        let Some(arg) = find_long(leaf, &long).or_else(|| find_long(root, &long)) else {
            continue;
        };
        for v in flag_values(arg, &long, value)? {
            argv.push(format!("--{long}").into());
            argv.push(v.into());
        }
    }
    Ok(argv)
}
