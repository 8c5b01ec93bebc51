//! `--set a.b.c=value` overrides applied to the JSON form of the config.

use serde_json::Value;
use xco2_core::{PipelineConfig, PipelineError, Stage};

fn bad(msg: String) -> PipelineError {
    PipelineError::config(Stage::Config, msg)
}

/// The value is parsed as JSON when it can be (numbers, booleans, arrays,
/// objects, `null`) and taken as a plain string otherwise.
pub fn apply(cfg: &PipelineConfig, sets: &[String]) -> Result<PipelineConfig, PipelineError> {
    if sets.is_empty() {
        return Ok(cfg.clone());
    }
    let mut root = serde_json::to_value(cfg).map_err(|e| bad(e.to_string()))?;
    for s in sets {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| bad(format!("override '{s}' is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut root, path, value)?;
    }
    serde_json::from_value(root)
        .map_err(|e| bad(format!("override produced an invalid config: {e}")))
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), PipelineError> {
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            // an absent optional section becomes an object on first write
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => return Err(bad(format!("'{}' is not an object", keys[..i].join(".")))),
        };
        if i + 1 == keys.len() {
            if !obj.contains_key(*key) && i == 0 {
                return Err(bad(format!("unknown config field '{key}'")));
            }
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_and_top_level() {
        let base = PipelineConfig::default();
        let c = apply(
            &base,
            &[
                "train.lr=0.01".into(),
                "seed=7".into(),
                "scenario.gap_fraction=0.5".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.seed, 7);
        assert_eq!(c.scenario.gap_fraction, 0.5);
        assert!(apply(&base, &["nonsense=1".into()]).is_err());
        assert!(apply(&base, &["seed".into()]).is_err());
        assert!(apply(&base, &["seed=\"x\"".into()]).is_err());
    }
}
