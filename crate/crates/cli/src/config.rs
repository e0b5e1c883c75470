//! Flat `key = value` configuration files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Lists are comma separated (`b_hidden = 40,40`), an absent
//! optional value is written `none`. Every command resolves its settings
//! from the built-in defaults, then the file, then command-line flags, and
//! rejects keys it does not know.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Number, Value};

use crate::error::{CliError, Result};

pub type Assignments = Vec<(String, String)>;

pub fn parse_flat(text: &str) -> Result<Assignments> {
    let mut out: Assignments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = split_assignment(line).map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
        if out.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Config(format!("line {}: `{key}` assigned twice", i + 1)));
        }
        out.push((key, value));
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<Assignments> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_flat(&text)
}

/// `KEY=VALUE` as given to `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String)> {
    split_assignment(s).map_err(CliError::Config)
}

fn split_assignment(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected `key = value`, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("missing key in `{s}`"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Defaults, overridden by `file`, overridden by `flags`.
pub fn resolve<S>(file: &[(String, String)], flags: &[(String, String)]) -> Result<S>
where
    S: Serialize + DeserializeOwned + Default,
{
    let Value::Object(mut map) = serde_json::to_value(S::default())? else {
        return Err(CliError::Config("settings must be a table".into()));
    };
    for (key, raw) in file.iter().chain(flags) {
        if !map.contains_key(key) {
            return Err(unknown_key(key, &map));
        }
        let slot = map.get_mut(key).expect("checked above");
        *slot = parse_value(slot, raw).map_err(|e| CliError::Config(format!("`{key}`: {e}")))?;
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(e.to_string()))
}

fn unknown_key(key: &str, map: &Map<String, Value>) -> CliError {
    let known: Vec<&str> = map.keys().map(String::as_str).collect();
    CliError::Config(format!("unknown key `{key}` (known: {})", known.join(", ")))
}

fn parse_number(raw: &str) -> std::result::Result<Number, String> {
    if let Ok(n) = raw.parse::<u64>() {
        return Ok(n.into());
    }
    let x: f64 = raw.parse().map_err(|_| format!("`{raw}` is not a number"))?;
    Number::from_f64(x).ok_or_else(|| format!("`{raw}` is not finite"))
}

/// Parses `raw` into the JSON type of the current value.
fn parse_value(current: &Value, raw: &str) -> std::result::Result<Value, String> {
    if raw == "none" && !current.is_string() {
        return Ok(Value::Null);
    }
    Ok(match current {
        Value::Bool(_) => match raw.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Value::Bool(true),
            "false" | "no" | "off" | "0" => Value::Bool(false),
            _ => return Err(format!("`{raw}` is not a boolean")),
        },
        Value::Number(_) => Value::Number(parse_number(raw)?),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) => Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_number(s).map(Value::Number))
                .collect::<std::result::Result<_, _>>()?,
        ),
        Value::Null if raw.is_empty() => Value::Null,
        Value::Null => match parse_number(raw) {
            Ok(n) => Value::Number(n),
            Err(_) => Value::String(raw.to_string()),
        },
        Value::Object(_) => return Err("nested tables are not supported".into()),
    })
}

/// Renders settings in the same flat format `parse_flat` reads.
pub fn to_flat<S: Serialize>(settings: &S, header: &str) -> Result<String> {
    let Value::Object(map) = serde_json::to_value(settings)? else {
        return Err(CliError::Config("settings must be a table".into()));
    };
    let mut out = format!("# {header}\n");
    for (k, v) in &map {
        let text = match v {
            Value::Null => "none".to_string(),
            Value::String(s) => s.clone(),
            Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            other => other.to_string(),
        };
        out.push_str(&format!("{k} = {text}\n"));
    }
    Ok(out)
}
