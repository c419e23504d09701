//! Experiment configuration files.
//!
//! Two forms are accepted. A JSON object is merged over the preset; any
//! subset of keys may be given. Otherwise the file is read as `key = value`
//! lines with dotted keys (`student_schedule.max_epochs = 40`), values in
//! JSON syntax or bare words. `#` starts a comment. The special key
//! `preset` (`desk` or `full`) picks the base configuration.

use std::path::Path;

use serde_json::{Map, Value};
use spectral_distill_core::pipeline::experiment::ExperimentConfig;

use crate::error::{CliError, Result};

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "desk" => Ok(ExperimentConfig::desk()),
        "full" => Ok(ExperimentConfig::full()),
        _ => Err(CliError::invalid(format!(
            "unknown preset {name:?} (expected desk or full)"
        ))),
    }
}

pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse(&text).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))
        }
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let (name, patch) = if text.trim_start().starts_with('{') {
        let mut v: Value =
            serde_json::from_str(text).map_err(|e| CliError::invalid(format!("bad JSON: {e}")))?;
        let obj = v
            .as_object_mut()
            .ok_or_else(|| CliError::invalid("config must be a JSON object"))?;
        let name = match obj.remove("preset") {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => {
                return Err(CliError::invalid(format!(
                    "preset must be a string, got {other}"
                )))
            }
        };
        (name, v)
    } else {
        key_values(text)?
    };
    let base = preset(name.as_deref().unwrap_or("desk"))?;
    let mut tree = serde_json::to_value(&base).expect("config serializes");
    merge(&mut tree, patch, "")?;
    let cfg: ExperimentConfig =
        serde_json::from_value(tree).map_err(|e| CliError::invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn key_values(text: &str) -> Result<(Option<String>, Value)> {
    let mut name = None;
    let mut patch = Value::Object(Map::new());
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::invalid(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "preset" {
            name = Some(v.to_string());
            continue;
        }
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        let mut node = &mut patch;
        let parts: Vec<&str> = k.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            if part.is_empty() {
                return Err(CliError::invalid(format!(
                    "line {}: malformed key {k:?}",
                    n + 1
                )));
            }
            let obj = node.as_object_mut().ok_or_else(|| {
                CliError::invalid(format!("line {}: {k} conflicts with an earlier key", n + 1))
            })?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
        }
    }
    Ok((name, patch))
}

/// Overlays `patch` on `base`, rejecting keys the configuration lacks.
fn merge(base: &mut Value, patch: Value, prefix: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| CliError::invalid(format!("unknown config key {path}")))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (b, p) if p.is_object() => Err(CliError::invalid(format!(
            "{prefix} is a value, not a section ({b})"
        ))),
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// Every setting as sorted `key = value` lines, readable by [`parse`].
pub fn to_key_values(cfg: &ExperimentConfig) -> String {
    fn walk(v: &Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let p = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(x, &p, out);
                }
            }
            _ => out.push(format!("{prefix} = {v}")),
        }
    }
    let mut out = Vec::new();
    walk(
        &serde_json::to_value(cfg).expect("config serializes"),
        "",
        &mut out,
    );
    out.sort();
    let mut s = out.join("\n");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_override_the_preset() {
        let cfg = parse("# tiny run\npreset = full\nseeds = [3, 4]\nstudent_schedule.max_epochs = 17\nsau.alignment = kl\n").unwrap();
        let full = ExperimentConfig::full();
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert_eq!(cfg.student_schedule.max_epochs, 17);
        assert_eq!(cfg.teacher, full.teacher);
        assert_eq!(format!("{:?}", cfg.sau.alignment), "Kl");
    }

    #[test]
    fn json_is_a_partial_overlay() {
        let cfg = parse(r#"{"world": {"sample_count": 300}, "weights": {"alpha": 0.5}}"#).unwrap();
        assert_eq!(cfg.world.sample_count, 300);
        assert_eq!(cfg.weights.alpha, 0.5);
        assert_eq!(cfg.weights.beta, ExperimentConfig::desk().weights.beta);
    }

    #[test]
    fn typos_and_bad_values_are_rejected() {
        assert!(parse("student_schedule.max_epoch = 7").is_err());
        assert!(parse("world = 3").is_err());
        assert!(parse("preset = huge").is_err());
        assert!(parse("weights.alpha = fast").is_err());
        assert!(parse("no equals sign").is_err());
        // validation runs after merging
        assert!(parse("student_schedule.early_stop_patience = 500").is_err());
    }

    #[test]
    fn dump_round_trips() {
        let mut cfg = ExperimentConfig::desk();
        cfg.weights.gamma = 0.123456789012345;
        cfg.seeds = vec![9];
        assert_eq!(parse(&to_key_values(&cfg)).unwrap(), cfg);
    }
}
