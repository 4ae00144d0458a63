use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Splices `key = value` entries from `--config FILE` into the argument
/// list right after the subcommand. Options given explicitly on the command
/// line win over the file.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let entries = fsgl::io::parse_config(&text)?;
    let explicit: HashSet<&str> = strs
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a))
        .collect();
    let mut injected = Vec::new();
    for (k, v) in &entries {
        if k == "config" || explicit.contains(k.as_str()) {
            continue;
        }
        match v.as_str() {
            "true" => injected.push(format!("--{k}")),
            "false" => {}
            _ => {
                injected.push(format!("--{k}"));
                injected.push(v.clone());
            }
        }
    }
    let mut out = args;
    let at = 2.min(out.len());
    out.splice(at..at, injected.into_iter().map(OsString::from));
    Ok(out)
}

/// Flattens resolved options into sorted `key = value` pairs.
pub fn resolved<T: Serialize>(args: &T) -> Vec<(String, String)> {
    let Ok(Value::Object(map)) = serde_json::to_value(args) else {
        return Vec::new();
    };
    map.into_iter()
        .filter_map(|(k, v)| {
            let s = match v {
                Value::Null => return None,
                Value::String(s) => s,
                Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            Some((k, s))
        })
        .collect()
}

pub fn write_resolved<T: Serialize>(path: &Path, command: &str, args: &T) -> Result<()> {
    let mut buf = format!("# fsgl {command}\n").into_bytes();
    fsgl::io::write_config(&mut buf, &resolved(args))?;
    std::fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn explicit_flags_beat_the_file() {
        let dir = std::env::temp_dir().join(format!("fsgl-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.txt");
        std::fs::write(
            &path,
            "# fsgl fit\nlambda = 2\nadaptive = true\nstratified = false\nout = x\n",
        )
        .unwrap();
        let p = path.to_string_lossy().into_owned();
        let out = expand(os(&["fsgl", "fit", "--config", &p, "--out=y"])).unwrap();
        let got: Vec<String> = out
            .iter()
            .map(|s| s.to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            got,
            [
                "fsgl",
                "fit",
                "--lambda",
                "2",
                "--adaptive",
                "--config",
                &p,
                "--out=y"
            ]
        );
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn resolved_flattens_values() {
        let v = json!({"alphas": [0.0, 0.5], "name": "a", "skip": null, "flag": true});
        let r = resolved(&v);
        assert_eq!(
            r,
            vec![
                ("alphas".to_string(), "0.0,0.5".to_string()),
                ("flag".to_string(), "true".to_string()),
                ("name".to_string(), "a".to_string()),
            ]
        );
    }
}
