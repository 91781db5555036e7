//! Flat `key = value` run configs.
//!
//! Keys are long flag names (`-` or `_` separators both accepted). A config
//! is expanded into flags placed right after the subcommand name. Keys also
//! given as explicit flags are dropped, so explicit flags win. Keys the
//! chosen subcommand does not accept are ignored; keys no subcommand accepts
//! are an error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{ArgMatches, Command};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Settings that never influence output bytes.
const UNHASHED: [&str; 4] = ["out", "config", "save_config", "threads"];

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::usage(format!("config line {}: empty key", i + 1)));
        }
        entries.push((key, value.trim().to_string()));
    }
    Ok(entries)
}

fn takes_value(arg: &clap::Arg) -> bool {
    arg.get_num_args().is_none_or(|n| n.takes_values())
        && !matches!(
            arg.get_action(),
            clap::ArgAction::SetTrue | clap::ArgAction::SetFalse | clap::ArgAction::Count
        )
}

/// Index of the subcommand name in `args`, skipping values of global options.
fn subcommand_position(cmd: &Command, args: &[OsString]) -> Option<usize> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if let Some(long) = a.strip_prefix("--") {
            if !long.contains('=') {
                let needs_value = cmd
                    .get_arguments()
                    .find(|g| g.get_long() == Some(long))
                    .is_some_and(takes_value);
                if needs_value {
                    i += 1;
                }
            }
        } else if cmd.find_subcommand(a.as_ref()).is_some() {
            return Some(i);
        }
        i += 1;
    }
    None
}

/// Value of `--config` in `args`, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter().skip(1);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Returns `args` with the flags of a `--config` file spliced in.
pub fn expand_args(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    let entries = parse_config(&text).map_err(|e| e.context(path.display()))?;
    let Some(pos) = subcommand_position(cmd, &args) else {
        return Ok(args);
    };
    let sub = cmd
        .find_subcommand(args[pos].to_string_lossy().as_ref())
        .expect("position found by name");
    let explicit: Vec<String> = args[1..]
        .iter()
        .filter_map(|a| {
            let a = a.to_string_lossy();
            let long = a.strip_prefix("--")?;
            Some(long.split('=').next().unwrap_or(long).to_string())
        })
        .collect();
    let lookup = |key: &str, c: &Command| c.get_arguments().find(|a| a.get_long() == Some(key)).cloned();
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        let arg = match lookup(&key, sub).or_else(|| lookup(&key, cmd)) {
            Some(arg) => arg,
            None => {
                let known = cmd.get_subcommands().any(|s| lookup(&key, s).is_some());
                if known {
                    continue;
                }
                return Err(CliError::usage(format!("{}: unknown config key `{key}`", path.display())));
            }
        };
        if key == "config" || key == "save-config" {
            return Err(CliError::usage(format!("{}: key `{key}` is not allowed in a config", path.display())));
        }
        if explicit.contains(&key) {
            continue;
        }
        if takes_value(&arg) {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        } else {
            match value.as_str() {
                "true" => injected.push(format!("--{key}").into()),
                "false" => {}
                other => {
                    return Err(CliError::usage(format!(
                        "{}: `{key}` expects true or false, got `{other}`",
                        path.display()
                    )))
                }
            }
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

/// Effective settings of a subcommand run: every argument with a value,
/// defaults included, keyed by long flag name.
pub fn effective_settings(sub: &Command, matches: &ArgMatches) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(long) = arg.get_long() else { continue };
        if UNHASHED.contains(&id) || matches!(id, "help" | "version") {
            continue;
        }
        if let Ok(Some(raw)) = matches.try_get_raw(id) {
            let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            out.insert(long.to_string(), values.join(","));
        }
    }
    out
}

/// Short digest of the subcommand name and its effective settings.
pub fn config_hash(command: &str, settings: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(format!("command={command}\n"));
    for (k, v) in settings {
        h.update(format!("{k}={v}\n"));
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn render_config(header: &str, settings: &BTreeMap<String, String>) -> String {
    let mut out = format!("# {header}\n");
    for (k, v) in settings {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_config() {
        let entries = parse_config("# comment\nseed = 7\n\nper_feature=12\n").unwrap();
        assert_eq!(
            entries,
            vec![("seed".into(), "7".into()), ("per-feature".into(), "12".into())]
        );
        assert!(parse_config("seed 7").is_err());
        assert!(parse_config(" = 7").is_err());
    }
}
