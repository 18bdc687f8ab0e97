//! `key = value` config files merged under command-line flags.
//!
//! Keys are long flag names (`seed`, `resamples`, `dcrit-form`; underscores
//! are accepted too). A key the chosen subcommand does not take is ignored if
//! some other subcommand takes it, so one file can serve several commands.
//! Boolean flags take `true` or `false`.

use std::ffi::OsString;

use clap::CommandFactory;

use crate::Cli;

fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

pub fn merged_args(raw: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let args: Vec<String> = raw.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(path) = config_path(&args) else {
        return Ok(raw);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("config {path}: {e}"))?;
    let entries = parse(&text)?;

    let cmd = Cli::command();
    let sub_names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let chosen = args.iter().skip(1).find(|a| sub_names.contains(a));
    let sub = chosen.and_then(|name| cmd.find_subcommand(name));

    let mut merged = raw;
    for (key, value) in entries {
        let given = args
            .iter()
            .any(|a| a == &format!("--{key}") || a.starts_with(&format!("--{key}=")));
        if given {
            continue;
        }
        let find = |c: &clap::Command| {
            c.get_arguments()
                .find(|a| a.get_long() == Some(key.as_str()))
                .map(|a| a.get_action().takes_values())
        };
        let takes_value = match find(&cmd).or_else(|| sub.and_then(find)) {
            Some(t) => t,
            None if cmd.get_subcommands().any(|s| find(s).is_some()) => continue,
            None => return Err(format!("config {path}: unknown key `{key}`")),
        };
        if key == "config" {
            continue;
        }
        if takes_value {
            merged.push(format!("--{key}").into());
            merged.push(value.into());
        } else {
            match value.as_str() {
                "true" => merged.push(format!("--{key}").into()),
                "false" => {}
                other => return Err(format!("config {path}: `{key}` expects true or false, got `{other}`")),
            }
        }
    }
    Ok(merged)
}
