//! Plain-text `key=value` configs and the run manifests written next to outputs.
//!
//! A config supplies flags of the chosen subcommand (and the global `seed`,
//! `threads`, `out`); flags given on the command line take precedence. A
//! manifest is itself a valid config, so `--config run.csv.manifest` repeats
//! a run.

use std::ffi::OsString;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

fn find_config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key=value", i + 1))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(seen, _)| *seen == k) {
            bail!("config line {}: key `{k}` given twice", i + 1);
        }
        out.push((k, v));
    }
    Ok(out)
}

fn by_long<'a>(cmd: &'a Command, key: &str) -> Option<&'a Arg> {
    cmd.get_arguments().find(|a| a.get_long() == Some(key))
}

fn tokens(arg: &Arg, key: &str, value: &str) -> Result<Vec<OsString>> {
    if matches!(arg.get_action(), ArgAction::SetTrue) {
        return match value {
            "true" => Ok(vec![format!("--{key}").into()]),
            "false" => Ok(vec![]),
            other => bail!("config key `{key}` is a switch; expected true or false, got `{other}`"),
        };
    }
    Ok(vec![format!("--{key}").into(), value.into()])
}

/// Splices the config named by `--config` into `args`: global keys right after
/// the program name, subcommand keys right after the subcommand, so explicit
/// flags (which come later) override them.
pub fn expand_config(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = find_config_path(&args) else { return Ok(args) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let entries = parse_config(&text)?;

    let sub_pos = args
        .iter()
        .position(|a| cmd.get_subcommands().any(|s| s.get_name() == a || s.get_all_aliases().any(|al| al == a)))
        .ok_or_else(|| anyhow!("--config needs a subcommand"))?;
    let sub_name = args[sub_pos].to_string_lossy().into_owned();
    let sub = cmd.get_subcommands().find(|s| s.get_name() == sub_name || s.get_all_aliases().any(|al| al == sub_name)).unwrap();

    let mut global = Vec::new();
    let mut local = Vec::new();
    for (key, value) in &entries {
        if key == "config" {
            bail!("config files cannot name another config");
        }
        if let Some(arg) = by_long(cmd, key).filter(|a| a.is_global_set()) {
            global.extend(tokens(arg, key, value)?);
        } else if let Some(arg) = by_long(sub, key) {
            local.extend(tokens(arg, key, value)?);
        } else {
            bail!("unknown config key `{key}` for {}", sub.get_name());
        }
    }

    let mut out = Vec::with_capacity(args.len() + global.len() + local.len());
    out.push(args[0].clone());
    out.extend(global);
    out.extend(args[1..=sub_pos].iter().cloned());
    out.extend(local);
    out.extend(args[sub_pos + 1..].iter().cloned());
    Ok(out)
}

/// Resolved values of every flag of the run, defaults included, as a config.
pub fn manifest_text(cmd: &Command, sub_name: &str, sub_matches: &ArgMatches) -> String {
    let sub = cmd.find_subcommand(sub_name).expect("known subcommand");
    let mut text = String::new();
    let _ = writeln!(text, "# gradinfo {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "# command: {sub_name}");
    for id in sub_matches.ids() {
        let id = id.as_str();
        let Some(arg) = sub.get_arguments().chain(cmd.get_arguments()).find(|a| a.get_id() == id) else { continue };
        let Some(long) = arg.get_long() else { continue };
        if matches!(long, "out" | "config" | "help" | "version") {
            continue;
        }
        let Ok(Some(raw)) = sub_matches.try_get_raw(id) else { continue };
        let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        let _ = writeln!(text, "{long}={}", vals.join(","));
    }
    text
}
