//! Run configuration files and manifests.
//!
//! A manifest is a JSON object
//!
//! ```json
//! {"version": "0.1.0", "command": ["evaluate"], "seed": 0, "threads": null,
//!  "out": "/abs/out", "options": {"data": "/abs/simpson.jsonl", "estimator": "ipwe"}}
//! ```
//!
//! and the same object is accepted by `--config`: it is expanded into
//! command-line arguments placed before the user's own flags, so flags given
//! on the command line override the file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Command, ValueHint};
use serde_json::{Map, Value};

pub const MANIFEST: &str = "manifest";

const TOP_KEYS: [&str; 6] = ["version", "command", "seed", "threads", "out", "options"];

/// Everything needed to re-run one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: Vec<String>,
    pub options: BTreeMap<String, Value>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

impl Manifest {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        m.insert("command".into(), self.command.clone().into());
        m.insert("seed".into(), self.seed.into());
        m.insert("threads".into(), self.threads.map_or(Value::Null, Value::from));
        m.insert("out".into(), self.out.to_string_lossy().into_owned().into());
        m.insert("options".into(), Value::Object(self.options.clone().into_iter().collect()));
        Value::Object(m)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        fs::write(dir.join(MANIFEST), text + "\n")?;
        Ok(())
    }
}

/// Replaces `--config FILE` in `args` by the arguments the file encodes.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    let bin = it.next().unwrap_or_else(|| "offpolicy".into());
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(it.next().ok_or("--config needs a file argument")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else {
        let mut out = vec![bin];
        out.extend(rest);
        return Ok(out);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.to_string_lossy()))?;
    let mut expanded = vec![bin];
    expanded.extend(config_args(&value)?);
    let command_len = value["command"].as_array().map_or(0, Vec::len);
    // a repeated subcommand path on the command line is dropped
    let same_path = rest.len() >= command_len
        && rest
            .iter()
            .zip(value["command"].as_array().into_iter().flatten())
            .all(|(a, c)| c.as_str() == Some(&*a.to_string_lossy()));
    expanded.extend(rest.into_iter().skip(if same_path { command_len } else { 0 }));
    Ok(expanded)
}

fn config_args(value: &Value) -> Result<Vec<OsString>, String> {
    let obj = value.as_object().ok_or("config must be a JSON object")?;
    if let Some(k) = obj.keys().find(|k| !TOP_KEYS.contains(&k.as_str())) {
        return Err(format!("unknown config key `{k}`"));
    }
    let mut args: Vec<OsString> = Vec::new();
    for part in obj
        .get("command")
        .and_then(Value::as_array)
        .ok_or("config needs a `command` array")?
    {
        args.push(part.as_str().ok_or("`command` entries must be strings")?.into());
    }
    for key in ["seed", "threads", "out"] {
        if let Some(v) = obj.get(key) {
            push_flag(&mut args, key, v)?;
        }
    }
    if let Some(options) = obj.get("options") {
        for (k, v) in options.as_object().ok_or("`options` must be an object")? {
            push_flag(&mut args, k, v)?;
        }
    }
    Ok(args)
}

fn push_flag(args: &mut Vec<OsString>, key: &str, value: &Value) -> Result<(), String> {
    let flag = format!("--{key}");
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(format!("option `{key}` has an unsupported value {v}")),
    };
    match value {
        Value::Null | Value::Bool(false) => {}
        Value::Bool(true) => args.push(flag.into()),
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?;
            args.push(flag.into());
            args.push(parts.join(",").into());
        }
        v => {
            args.push(flag.into());
            args.push(scalar(v)?.into());
        }
    }
    Ok(())
}

/// Subcommand path and the matches of the innermost subcommand.
pub fn leaf<'a>(root: &'a Command, matches: &'a ArgMatches) -> (Vec<String>, &'a Command, &'a ArgMatches) {
    let (mut cmd, mut m, mut path) = (root, matches, Vec::new());
    while let Some((name, sub)) = m.subcommand() {
        path.push(name.to_string());
        cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
        m = sub;
    }
    (path, cmd, m)
}

/// Options of the innermost subcommand, as given or defaulted. File paths
/// that exist are made absolute so the manifest can be replayed from any
/// directory.
pub fn collect_options(cmd: &Command, matches: &ArgMatches, globals: &[&str]) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if globals.contains(&id) || matches!(id, "help" | "version") {
            continue;
        }
        let Some(long) = arg.get_long() else { continue };
        if matches.value_source(id).is_none() {
            continue;
        }
        let Some(raw) = matches.get_raw(id) else { continue };
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        if !arg.get_action().takes_values() {
            if values.first().map(String::as_str) == Some("true") {
                out.insert(long.to_string(), Value::Bool(true));
            }
            continue;
        }
        let values: Vec<String> = if arg.get_value_hint() == ValueHint::FilePath {
            values.into_iter().map(|v| absolute(&v)).collect()
        } else {
            values
        };
        out.insert(long.to_string(), Value::String(values.join(",")));
    }
    out
}

fn absolute(v: &str) -> String {
    match Path::new(v).canonicalize() {
        Ok(p) if Path::new(v).exists() => p.to_string_lossy().into_owned(),
        _ => v.to_string(),
    }
}
