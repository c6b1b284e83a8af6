//! `--config file.json`: JSON keys become flags placed ahead of the command-line
//! flags, so the command line wins.
//!
//! Scalar top-level keys apply to every subcommand that has the flag. An object
//! named `config` (as written into model files by `fit`) and an object named after
//! the subcommand are applied afterwards, in that order. Keys may use `_` or `-`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;

use clap::CommandFactory;
use mixdens::{Error, Result};
use serde_json::{Map, Value};

use crate::args::Cli;
use crate::io::read_text;

const SUBCOMMANDS: [&str; 7] = ["simulate", "fit", "posterior", "evaluate", "coverage", "cv", "sensitivity"];

/// Returns `argv` with the config file's flags spliced in after the subcommand name.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(sub_pos) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| SUBCOMMANDS.iter().any(|s| a.to_str() == Some(s)))
        .map(|(i, _)| i)
    else {
        return Ok(argv);
    };
    let sub = argv[sub_pos].to_str().expect("matched a subcommand name").to_string();
    let text = read_text(Path::new(&path))?;
    let root: Value = serde_json::from_str(&text)?;
    let Value::Object(root) = root else {
        return Err(Error::InvalidInput(format!("config {path}: top level must be a JSON object")));
    };
    let injected = flags_for(&root, &sub)?;
    let mut out = argv[..=sub_pos].to_vec();
    out.extend(injected);
    out.extend(argv[sub_pos + 1..].iter().cloned());
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let a = a.to_str()?;
        if a == "--" {
            return None;
        }
        if a == "--config" {
            return it.next().and_then(|v| v.to_str()).map(str::to_string);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn long_flags(sub: &str) -> BTreeSet<String> {
    let cmd = Cli::command();
    cmd.find_subcommand(sub)
        .map(|c| c.get_arguments().filter_map(|a| a.get_long()).map(str::to_string).collect())
        .unwrap_or_default()
}

fn flags_for(root: &Map<String, Value>, sub: &str) -> Result<Vec<OsString>> {
    let own = long_flags(sub);
    let any: BTreeSet<String> = SUBCOMMANDS.iter().flat_map(|s| long_flags(s)).collect();
    let mut out = Vec::new();
    let scalars: Map<String, Value> = root.iter().filter(|(_, v)| !v.is_object()).map(|(k, v)| (k.clone(), v.clone())).collect();
    let sections = [Some(&scalars), object(root, "config"), object(root, sub)];
    for section in sections.into_iter().flatten() {
        for (key, value) in section {
            let flag = key.replace('_', "-");
            if flag == "config" || value.is_object() {
                continue;
            }
            if !own.contains(&flag) {
                if any.contains(&flag) {
                    continue;
                }
                return Err(Error::InvalidInput(format!("config key '{key}' is not a known flag")));
            }
            push_flag(&mut out, &flag, value)?;
        }
    }
    Ok(out)
}

fn object<'a>(root: &'a Map<String, Value>, key: &str) -> Option<&'a Map<String, Value>> {
    root.get(key).and_then(Value::as_object)
}

fn push_flag(out: &mut Vec<OsString>, flag: &str, value: &Value) -> Result<()> {
    let text = match value {
        Value::Null | Value::Bool(false) => return Ok(()),
        Value::Bool(true) => {
            out.push(format!("--{flag}").into());
            return Ok(());
        }
        Value::Number(n) => n.to_string(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::Number(n) => Ok(n.to_string()),
                Value::String(s) => Ok(s.clone()),
                _ => Err(Error::InvalidInput(format!("config key '{flag}': list entries must be numbers or strings"))),
            })
            .collect::<Result<Vec<_>>>()?
            .join(","),
        Value::Object(_) => unreachable!("objects are sections"),
    };
    out.push(format!("--{flag}={text}").into());
    Ok(())
}
