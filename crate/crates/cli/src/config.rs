//! `--config FILE` support: each `key = value` line becomes `--key value`,
//! inserted right after the subcommand so flags given on the command line
//! (which come later and override) win.

use std::ffi::OsString;
use std::fs;

use clap::{Arg, ArgAction, Command};

pub fn expand(argv: Vec<OsString>, cmd: &Command) -> Result<Vec<OsString>, String> {
    let mut args = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => match it.next() {
                Some(p) => path = Some(p),
                None => return Err("--config needs a path".into()),
            },
            Some(s) if s.starts_with("--config=") => path = Some(OsString::from(&s["--config=".len()..])),
            _ => args.push(a),
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;

    let Some((at, sub)) = args
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a.to_str()?).map(|s| (i, s)))
    else {
        return Ok(args);
    };
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", n + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = lookup(sub, &key).ok_or_else(|| format!("config line {}: unknown key `{key}` for {}", n + 1, sub.get_name()))?;
        push_arg(arg, &key, value, &mut extra).map_err(|e| format!("config line {}: {e}", n + 1))?;
    }
    args.splice(at + 1..at + 1, extra);
    Ok(args)
}

fn lookup<'a>(sub: &'a Command, key: &str) -> Option<&'a Arg> {
    if matches!(key, "config" | "help" | "version") {
        return None;
    }
    sub.get_arguments()
        .find(|a| a.get_long() == Some(key) || a.get_all_aliases().is_some_and(|al| al.contains(&key)))
}

fn push_arg(arg: &Arg, key: &str, value: &str, out: &mut Vec<OsString>) -> Result<(), String> {
    let flag = OsString::from(format!("--{key}"));
    match arg.get_action() {
        ArgAction::SetTrue => {
            if parse_bool(value)? {
                out.push(flag);
            }
        }
        ArgAction::Count => {
            let n: usize = value.parse().map_err(|_| format!("`{key}` expects a count"))?;
            out.extend(std::iter::repeat_n(flag, n));
        }
        _ => {
            out.push(flag);
            out.push(value.into());
        }
    }
    Ok(())
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{s}` is not a boolean")),
    }
}
