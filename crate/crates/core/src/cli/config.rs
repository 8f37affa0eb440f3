use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluation::ExperimentConfig;

/// Structural problem found while checking a config tree against the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyProblem {
    pub key: String,
    pub problem: String,
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_f64() => "float",
        Value::Number(_) => "integer",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "table",
    }
}

fn compatible(schema: &Value, given: &Value) -> bool {
    match (schema, given) {
        (Value::Null, _) => true,
        (Value::Number(s), Value::Number(g)) => s.is_f64() || !g.is_f64(),
        _ => std::mem::discriminant(schema) == std::mem::discriminant(given),
    }
}

/// Every unknown key and type mismatch of `given` relative to `schema`.
pub fn check_against(schema: &Value, given: &Value, path: &str, out: &mut Vec<KeyProblem>) {
    match (schema, given) {
        (Value::Object(s), Value::Object(g)) => {
            for (k, v) in g {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match s.get(k) {
                    Some(sv) => check_against(sv, v, &p, out),
                    None => out.push(KeyProblem { key: p, problem: "unknown key".into() }),
                }
            }
        }
        (Value::Array(s), Value::Array(g)) => {
            if let Some(elem) = s.first() {
                for (i, v) in g.iter().enumerate() {
                    check_against(elem, v, &format!("{path}[{i}]"), out);
                }
            }
        }
        _ if !compatible(schema, given) => out.push(KeyProblem {
            key: path.to_string(),
            problem: format!("expected {}, found {}", kind(schema), kind(given)),
        }),
        _ => {}
    }
}

/// Parses TOML text into a validated configuration. Unknown keys, type errors
/// and range violations are all reported together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(format!("TOML syntax: {e}")))?;
    let given = serde_json::to_value(&table)?;
    let schema = serde_json::to_value(ExperimentConfig::default())?;
    let mut problems = Vec::new();
    check_against(&schema, &given, "", &mut problems);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|p| format!("{}: {}", p.key, p.problem)).collect();
        return Err(Error::config(list.join("; ")));
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(given).map_err(|e| Error::config(format!("invalid value: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_defaults() {
        assert_eq!(parse_config("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_config("[pretrain]\nsteps = 5\n[pretrain.loss]\ntemperature = 1\n[plan]\nhorizons = [7, 30]\n").unwrap();
        assert_eq!(cfg.pretrain.steps, 5);
        assert_eq!(cfg.pretrain.loss.temperature, 1.0);
        assert_eq!(cfg.plan.horizons, vec![7, 30]);
    }

    #[test]
    fn every_offending_key_listed() {
        let err = parse_config("bogus = 1\n[model]\nheads = \"four\"\nextra = true\n[finetune]\nepochs = 1.5\n")
            .unwrap_err()
            .to_string();
        for key in ["bogus: unknown key", "model.heads: expected integer", "model.extra: unknown key", "finetune.epochs"] {
            assert!(err.contains(key), "{key} missing from {err}");
        }
    }

    #[test]
    fn lambda_sum_rejected() {
        let err = parse_config("[pretrain.loss]\nlambda1 = 0.5\nlambda2 = 0.5\n").unwrap_err().to_string();
        assert!(err.contains("lambda1 + loss.lambda2"), "{err}");
    }
}
