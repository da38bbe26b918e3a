//! Config layering: template defaults, then the config file, then `--set`.

use serde_json::{Map, Value};

/// Recursively merge `patch` into `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse `a.b.c=value`. The value is read as JSON when it parses, and as a
/// plain string otherwise, so `--set data.source.kind=rings` works unquoted.
pub fn parse_set(arg: &str) -> Result<(Vec<String>, Value), String> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| format!("--set expects key=value, got {arg:?}"))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("--set key {key:?} has an empty path segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

/// Write `value` at `path`, creating intermediate objects. Array elements
/// are addressed by index.
pub fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<(), String> {
    let mut cur = root;
    for (i, seg) in path.iter().enumerate() {
        let last = i + 1 == path.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.clone(), value);
                    return Ok(());
                }
                map.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()))
            }
            Value::Array(items) => {
                let at = path[..=i].join(".");
                let idx: usize = seg.parse().map_err(|_| format!("`{at}`: expected an array index"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| format!("`{at}`: index out of range (length {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("`{}` is not an object", path[..i].join("."))),
        };
    }
    Err("empty --set path".into())
}
