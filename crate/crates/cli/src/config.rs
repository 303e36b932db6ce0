//! JSON configuration files.
//!
//! A configuration file is a flat JSON object whose keys are the long option
//! names of the subcommand (`r_phi` or `r-phi`). Values given on the command
//! line win over the file, and the file wins over built-in defaults. The merge
//! is done by appending the file's entries as `--key=value` arguments that were
//! not already given, then parsing again, so every value goes through the same
//! validation as a flag.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde_json::Value;

pub const CONFIG_ARG: &str = "config";

/// Returns the extra arguments contributed by the configuration file of the
/// selected subcommand, or nothing when `--config` is absent.
pub fn config_args(root: &Command, matches: &ArgMatches) -> Result<Vec<OsString>> {
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(Vec::new());
    };
    let Some(path) = sub.get_one::<std::path::PathBuf>(CONFIG_ARG) else {
        return Ok(Vec::new());
    };
    let cmd = root
        .find_subcommand(name)
        .context("subcommand definition missing")?;
    let object = read_object(path)?;
    let mut out = Vec::new();
    for (key, value) in &object {
        let id = key.replace('-', "_");
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_id().as_str() == id && a.get_long().is_some())
            .filter(|a| a.get_id().as_str() != CONFIG_ARG)
            .with_context(|| format!("{}: unknown key `{key}` for `{name}`", path.display()))?;
        if sub.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let long = arg.get_long().expect("filtered on long names");
        let values = match value {
            Value::Array(items) => items.iter().map(|v| scalar(path, key, v)).collect::<Result<Vec<_>>>()?,
            v => vec![scalar(path, key, v)?],
        };
        for v in values {
            out.push(OsString::from(format!("--{long}={v}")));
        }
    }
    Ok(out)
}

fn read_object(path: &Path) -> Result<serde_json::Map<String, Value>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str::<Value>(&text).with_context(|| format!("parsing {}", path.display()))? {
        Value::Object(map) => Ok(map),
        _ => bail!("{}: expected a JSON object", path.display()),
    }
}

fn scalar(path: &Path, key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => bail!("{}: key `{key}` must be a string, number, boolean or list of those", path.display()),
    }
}
