use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::SynthParams;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub sensors: usize,
    pub steps: usize,
    pub seed: u64,
    pub process: SynthParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sensors: 24,
            steps: 3000,
            seed: 0,
            process: SynthParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Registered method names to score, each with its JSON parameters.
    pub methods: Vec<MethodSpec>,
    /// Score every `stride`-th test window.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

impl MethodSpec {
    fn new(name: &str, params: Value) -> Self {
        MethodSpec {
            name: name.into(),
            params,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: vec![
                MethodSpec::new("lsjstn", Value::Null),
                MethodSpec::new("lsjstn-short", Value::Null),
                MethodSpec::new("knn", serde_json::json!({"k": 5})),
                MethodSpec::new("idw", serde_json::json!({"rho": 1.0})),
            ],
            stride: 1,
        }
    }
}

/// Everything a command needs; flags are shorthands for fields here.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Target frame for `infer` and `attn-dump`: an index or a timestamp.
    pub time: Option<String>,
    /// Coordinates CSV of locations to infer.
    pub locations: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.stride == 0 {
            return Err(Error::Config("eval.stride must be positive".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
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

/// Applies `key.path=value`; the value is read as JSON, else as a string.
fn apply_set(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("--set {key}: {part:?} is not inside an object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("--set with an empty key".into()))
}

/// Defaults, then the config file, then each `--set`, rejecting unknown keys.
pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut root = serde_json::to_value(RunConfig::default())?;
    if let Some(p) = file {
        let text = std::fs::read_to_string(p)?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
        merge(&mut root, patch);
    }
    for s in sets {
        apply_set(&mut root, s)?;
    }
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = resolve(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = serde_json::from_value(serde_json::to_value(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn set_overrides() {
        let cfg = resolve(
            None,
            &[
                "train.epochs=2".into(),
                "model.hidden=8".into(),
                "dataset=some/dir/manifest.json".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.model.hidden, 8);
        assert_eq!(
            cfg.dataset.as_deref(),
            Some(Path::new("some/dir/manifest.json"))
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(resolve(None, &["train.epoch=2".into()]).is_err());
        assert!(resolve(None, &["bogus=1".into()]).is_err());
        assert!(resolve(None, &["train".into()]).is_err());
        assert!(
            resolve(None, &["model.window=4".into()]).is_err(),
            "validated"
        );
    }

    #[test]
    fn file_then_sets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"epochs": 3, "lr": 0.01}}"#).unwrap();
        let cfg = resolve(Some(&p), &["train.epochs=4".into()]).unwrap();
        assert_eq!((cfg.train.epochs, cfg.train.lr), (4, 0.01));
        std::fs::write(&p, r#"{"train": {"nope": 1}}"#).unwrap();
        assert!(resolve(Some(&p), &[]).is_err());
    }
}
