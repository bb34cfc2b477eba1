//! The single-JSON-document configuration of a pipeline run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::assembler::{Grouping, SplitSpec};
use crate::baselines::{BaselineKind, GridSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::parser::ParserConfig;

use super::adapters::InputSpec;

/// Recursively overlays `patch` onto `base`; objects merge key by key,
/// everything else is replaced.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Resolves a model section that may name a `"preset"` (`full` or `desk`)
/// and override individual keys of it.
pub fn model_from_value(mut v: Value) -> Result<ModelConfig> {
    let preset = match v.as_object_mut().and_then(|o| o.remove("preset")) {
        None => ModelConfig::default(),
        Some(Value::String(p)) if p == "full" => ModelConfig::full(),
        Some(Value::String(p)) if p == "desk" => ModelConfig::desk(),
        Some(other) => {
            return Err(Error::config(format!(
                "unknown model preset {other} (expected \"full\" or \"desk\")"
            )))
        }
    };
    let mut base = serde_json::to_value(preset)?;
    merge_json(&mut base, v);
    serde_json::from_value(base).map_err(|e| Error::config(format!("model section: {e}")))
}

pub(crate) fn deserialize_model<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ModelConfig, D::Error> {
    model_from_value(Value::deserialize(d)?).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub input: InputSpec,
    #[serde(default)]
    pub parser: ParserConfig,
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default, deserialize_with = "deserialize_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Count-vector baselines evaluated alongside the transformer.
    #[serde(default)]
    pub baselines: Vec<BaselineKind>,
    #[serde(default)]
    pub grid: GridSpec,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.input.validate()?;
        self.parser.validate()?;
        self.model.validate()?;
        if let Grouping::Variable(w) = &self.grouping {
            w.validate()?;
        }
        Ok(())
    }

    /// Reads a config file; relative paths inside it are taken relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(&mut self.input.path, base);
        if let Some(p) = self.input.labels.as_mut() {
            resolve(p, base);
        }
        if let Some(p) = self.model.embedding.path.as_mut() {
            resolve(p, base);
        }
    }
}

pub(crate) fn resolve(p: &mut PathBuf, base: &Path) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Model and training sections, as read by the stand-alone `train`
/// command. A full pipeline config is accepted too (other keys ignored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainJob {
    #[serde(default, deserialize_with = "deserialize_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl TrainJob {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut job: TrainJob = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if let Some(p) = job.model.embedding.path.as_mut() {
            resolve(p, path.parent().unwrap_or(Path::new("")));
        }
        job.model.validate()?;
        Ok(job)
    }
}
