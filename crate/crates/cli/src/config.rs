//! `--config` support. The file is a flat JSON object keyed by long flag
//! name (`min_pool` and `min-pool` are both accepted). Values are turned back
//! into flags and parsed by clap, so they are validated exactly like the
//! command line. Precedence: command line, environment, config, default.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde_json::{Map, Value};

use crate::CliError;

const RESERVED: [&str; 3] = ["help", "version", "config"];

fn known_keys(cmd: &Command, out: &mut BTreeSet<String>) {
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if !RESERVED.contains(&id) {
            out.insert(id.to_owned());
        }
    }
    for sub in cmd.get_subcommands() {
        known_keys(sub, out);
    }
}

pub fn load(path: &Path, cmd: &Command) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("{}:{}: {e}", path.display(), e.line())))?;
    let Value::Object(raw) = value else {
        return Err(CliError::invalid(format!("{}: expected a JSON object", path.display())));
    };
    let mut known = BTreeSet::new();
    known_keys(cmd, &mut known);
    let mut map = Map::new();
    for (key, value) in raw {
        let id = key.replace('-', "_");
        if !known.contains(&id) {
            return Err(CliError::invalid(format!("{}: unknown key `{key}`", path.display())));
        }
        map.insert(id, value);
    }
    Ok(map)
}

fn render(key: &str, value: &Value) -> Result<Vec<String>, CliError> {
    match value {
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Number(n) => Ok(vec![n.to_string()]),
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                out.extend(render(key, item)?);
            }
            Ok(out)
        }
        Value::Null => Ok(Vec::new()),
        _ => Err(CliError::invalid(format!("config key `{key}`: unsupported value {value}"))),
    }
}

/// Extra arguments that apply the config to the flags of the selected
/// subcommand that were left at their defaults.
pub fn overlay(cmd: &Command, matches: &ArgMatches, config: &Map<String, Value>) -> Result<Vec<OsString>, CliError> {
    let (mut cmd, mut matches) = (cmd, matches);
    while let Some((name, sub)) = matches.subcommand() {
        cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
        matches = sub;
    }
    let mut extra = Vec::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(value) = config.get(id) else { continue };
        if RESERVED.contains(&id) {
            continue;
        }
        if !matches!(matches.value_source(id), None | Some(ValueSource::DefaultValue)) {
            continue;
        }
        let Some(long) = arg.get_long() else { continue };
        if !arg.get_action().takes_values() {
            if value.as_bool() == Some(true) {
                extra.push(format!("--{long}").into());
            }
            continue;
        }
        for v in render(id, value)? {
            extra.push(format!("--{long}={v}").into());
        }
    }
    Ok(extra)
}
