//! Resolution of a command's configuration from defaults, an optional JSON
//! file, explicit flags and `key=value` overrides, in that order of
//! increasing precedence.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Classify, CliError};

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn check_keys(known: &Map<String, Value>, patch: &Value, source: &str) -> Result<(), CliError> {
    if let Value::Object(p) = patch {
        if let Some(bad) = p.keys().find(|k| !known.contains_key(*k)) {
            return Err(CliError::Validation(format!("unknown key '{bad}' in {source}")));
        }
        Ok(())
    } else {
        Err(CliError::Validation(format!("{source} must be a JSON object")))
    }
}

/// `key=value`; the value is parsed as JSON and taken as a string when that
/// fails, so `method=dpls` and `k=3` both work.
fn parse_set(raw: &str) -> Result<(String, Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override '{raw}' is not key=value")))?;
    let key = key.trim().replace('-', "_");
    if key.is_empty() {
        return Err(CliError::Validation(format!("override '{raw}' has an empty key")));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key, value))
}

pub struct Sources<'a> {
    pub file: Option<&'a Path>,
    pub flags: Value,
    pub sets: &'a [String],
}

pub fn resolve<C: Serialize + DeserializeOwned + Default>(src: Sources<'_>) -> Result<C, CliError> {
    let mut value = serde_json::to_value(C::default()).failed("serializing defaults")?;
    let known = value.as_object().cloned().unwrap_or_default();
    if let Some(path) = src.file {
        let text = std::fs::read_to_string(path).invalid(&format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).invalid(&format!("parsing {}", path.display()))?;
        check_keys(&known, &file, &path.display().to_string())?;
        merge(&mut value, file);
    }
    check_keys(&known, &src.flags, "flags")?;
    merge(&mut value, src.flags);
    for raw in src.sets {
        let (key, v) = parse_set(raw)?;
        let patch = Value::Object(Map::from_iter([(key, v)]));
        check_keys(&known, &patch, "--set")?;
        merge(&mut value, patch);
    }
    serde_json::from_value(value).invalid("config")
}

/// Seed lists: `3`, `0,4,9` or an inclusive range `0..9`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.parse().map_err(|_| format!("bad seed range '{part}'"))?;
            let b: u64 = b.trim_start_matches('=').parse().map_err(|_| format!("bad seed range '{part}'"))?;
            if b < a {
                return Err(format!("empty seed range '{part}'"));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| format!("bad seed '{part}'"))?);
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(out)
}

pub fn absolute(path: &mut Option<PathBuf>) -> Result<(), CliError> {
    if let Some(p) = path {
        *p = std::path::absolute(&*p).invalid(&format!("resolving {}", p.display()))?;
    }
    Ok(())
}
