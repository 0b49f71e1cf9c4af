//! `--config FILE`: a JSON object whose keys are long flag names, turned into
//! ordinary arguments placed right after the subcommand. Later occurrences of
//! a flag override earlier ones, so explicit flags win over the file.

use std::ffi::OsString;
use std::path::Path;

use serde_json::Value;

fn config_path(args: &[OsString]) -> Option<(usize, usize, OsString)> {
    for (k, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return args.get(k + 1).map(|p| (k, 2, p.clone()));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some((k, 1, OsString::from(p)));
        }
    }
    None
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Flag list equivalent to a config object. A manifest is accepted as well:
/// its `config` member is used.
pub fn to_args(value: &Value) -> Result<Vec<OsString>, String> {
    let obj = match value.get("config") {
        Some(inner @ Value::Object(_)) => inner,
        _ => value,
    };
    let Value::Object(map) = obj else {
        return Err("config file must hold a JSON object".into());
    };
    let mut out = Vec::new();
    for (key, v) in map {
        let flag = format!("--{key}");
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag.into()),
            Value::Array(items) => {
                let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
                let parts = parts.ok_or_else(|| format!("config key '{key}': list items must be strings or numbers"))?;
                if !parts.is_empty() {
                    out.push(flag.into());
                    out.push(parts.join(",").into());
                }
            }
            other => {
                let s = scalar(other).ok_or_else(|| format!("config key '{key}': unsupported value {other}"))?;
                out.push(flag.into());
                out.push(s.into());
            }
        }
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("config {} is not valid JSON: {e}", path.display()))
}

/// Replaces `--config FILE` by the flags it contains.
pub fn expand(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some((at, width, path)) = config_path(&args) else {
        return Ok(args);
    };
    let extra = to_args(&load(Path::new(&path))?)?;
    args.drain(at..at + width);
    // program name, then subcommand
    let insert_at = args.len().min(2);
    args.splice(insert_at..insert_at, extra);
    Ok(args)
}
