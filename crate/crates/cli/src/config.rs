//! Run configuration: one TOML document with a section per pipeline stage.

use std::path::Path;

use groupfield::decompose::{DecomposeParams, DEFAULT_THRESHOLD};
use groupfield::field::FieldConfig;
use groupfield::scale::ScaleStatistic;
use groupfield::synth::{CameraRig, HierSpec, LevelMix};
use groupfield::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalesConfig {
    pub statistic: ScaleStatistic,
}

impl Default for ScalesConfig {
    fn default() -> Self {
        Self {
            statistic: ScaleStatistic::StdNorm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    /// Clicks farther than this from every point are skipped.
    pub click_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            click_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: HierSpec,
    pub cameras: CameraRig,
    pub masks: LevelMix,
    pub scales: ScalesConfig,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub decompose: DecomposeParams,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults, then the optional file, then `key=value` overrides, then the seed.
    pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut doc = toml::Value::try_from(RunConfig::default()).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
            let file: toml::Value = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut doc, file);
        }
        for s in sets {
            apply_set(&mut doc, s)?;
        }
        let mut cfg: RunConfig = doc.clone().try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let known = toml::Value::try_from(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(key) = unknown_key(&doc, &known, "") {
            return Err(CliError::Config(format!("unknown config key {key}")));
        }
        if let Some(seed) = seed {
            cfg.synth.seed = seed;
            cfg.field.seed = seed;
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }
}

/// First key of `doc` that does not survive a round trip through the typed config.
fn unknown_key(doc: &toml::Value, known: &toml::Value, prefix: &str) -> Option<String> {
    let (toml::Value::Table(d), toml::Value::Table(k)) = (doc, known) else {
        return None;
    };
    d.iter().find_map(|(key, v)| {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match k.get(key) {
            Some(kv) => unknown_key(v, kv, &path),
            None => Some(path),
        }
    })
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
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

/// Set a dotted key such as `train.steps=500`. The value is read as TOML,
/// falling back to a bare string.
pub fn apply_set(doc: &mut toml::Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("{key}: {} is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(CliError::Config(format!("empty override key in {assignment:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_and_seed() {
        let sets = vec![
            "train.steps=7".to_string(),
            "field.mlp_width=16".to_string(),
            "scales.statistic=bbox_diagonal".to_string(),
            "decompose.min_samples=5".to_string(),
        ];
        let cfg = RunConfig::load(None, &sets, Some(9)).unwrap();
        assert_eq!(cfg.train.steps, 7);
        assert_eq!(cfg.field.mlp_width, 16);
        assert_eq!(cfg.scales.statistic, ScaleStatistic::BboxDiagonal);
        assert_eq!(cfg.decompose.min_samples, Some(5));
        assert_eq!((cfg.synth.seed, cfg.field.seed, cfg.train.seed), (9, 9, 9));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["eval.treshold=0.5".into()], None).is_err());
        assert!(RunConfig::load(None, &["train.stepz=4".into()], None).is_err());
        assert!(RunConfig::load(None, &["nonsense".into()], None).is_err());
    }

    #[test]
    fn file_values_merge_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nsteps = 3\n[train.sampling]\nrays_per_image = 8\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.steps=4".into()], None).unwrap();
        assert_eq!(cfg.train.steps, 4);
        assert_eq!(cfg.train.sampling.rays_per_image, 8);
        assert_eq!(cfg.train.sampling.images_per_batch, TrainConfig::default().sampling.images_per_batch);
    }
}
