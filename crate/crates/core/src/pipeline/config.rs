use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::ClusterConfig;
use crate::error::{Error, Result};
use crate::ingest::{AugmentationPolicy, SyntheticSpec, DEFAULT_SIDE};
use crate::model::{Architecture, TrainConfig};
use crate::reliability::DEFAULT_THRESHOLD;
use crate::saliency::ExplainConfig;
use crate::types::SaliencyMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generate a planted-error dataset under `<out>/data`.
    Synthetic(SyntheticSpec),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Side length images are resized to; synthetic data uses its own side.
    pub image_side: usize,
    pub augmentation: AugmentationPolicy,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic(SyntheticSpec::default()),
            image_side: DEFAULT_SIDE,
            augmentation: AugmentationPolicy::default(),
        }
    }
}

impl DatasetConfig {
    pub fn side(&self) -> usize {
        match &self.source {
            DatasetSource::Synthetic(spec) => spec.side,
            DatasetSource::Manifest(_) => self.image_side,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Use this checkpoint instead of `<out>/checkpoints/best.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub architecture: Architecture,
    pub train: TrainConfig,
    /// Seed for weight initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            architecture: Architecture::default(),
            train: TrainConfig::default(),
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliabilityConfig {
    pub threshold: f64,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// One document configuring every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub saliency: ExplainConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub reliability: ReliabilityConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub method: Option<SaliencyMethod>,
}

/// Paths inside a `seed` key that inherit the global seed when absent.
const SEEDED_SECTIONS: [&[&str]; 5] = [
    &["dataset", "source", "synthetic"],
    &["model", "train"],
    &["saliency", "lime"],
    &["cluster"],
    &["model"],
];

impl PipelineConfig {
    /// Defaults everywhere; stage seeds follow the global seed.
    pub fn with_seed(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        let v = serde_json::json!({ "seed": seed, "out_dir": out_dir.into() });
        Self::from_value(v, &Overrides::default()).expect("default config is valid")
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let v = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::format(p, e.to_string()))?
            }
            None => Value::Object(Default::default()),
        };
        Self::from_value(v, overrides)
    }

    /// Resolution order: flag, then config key, then default. Stage sections
    /// without their own `seed` inherit the global one.
    pub fn from_value(mut v: Value, overrides: &Overrides) -> Result<Self> {
        let obj = v
            .as_object_mut()
            .ok_or_else(|| Error::invalid("config must be a JSON object"))?;
        if let Some(seed) = overrides.seed {
            obj.insert("seed".into(), seed.into());
        }
        if let Some(out) = &overrides.out_dir {
            obj.insert("out_dir".into(), out.to_string_lossy().into_owned().into());
        }
        let seed = obj
            .get("seed")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::invalid("a global `seed` is required (config key or --seed)"))?;
        if !obj.contains_key("out_dir") {
            return Err(Error::invalid("an output directory is required (config key `out_dir` or --out)"));
        }
        if let Some(m) = overrides.method {
            let sal = obj.entry("saliency").or_insert_with(|| Value::Object(Default::default()));
            sal.as_object_mut()
                .ok_or_else(|| Error::invalid("`saliency` must be an object"))?
                .insert("method".into(), serde_json::to_value(m).expect("method serializes"));
        }
        let synthetic_default = !obj
            .get("dataset")
            .and_then(|d| d.get("source"))
            .is_some_and(|s| s.get("manifest").is_some());
        if synthetic_default {
            let ds = obj.entry("dataset").or_insert_with(|| Value::Object(Default::default()));
            if let Some(d) = ds.as_object_mut() {
                let src = d
                    .entry("source")
                    .or_insert_with(|| serde_json::json!({ "synthetic": {} }));
                if let Some(s) = src.as_object_mut() {
                    s.entry("synthetic").or_insert_with(|| Value::Object(Default::default()));
                }
            }
        }
        for path in SEEDED_SECTIONS {
            let key = if path == ["model"] { "init_seed" } else { "seed" };
            inherit_seed(&mut v, path, key, seed)?;
        }
        let cfg: PipelineConfig =
            serde_json::from_value(v).map_err(|e| Error::invalid(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset.source {
            DatasetSource::Synthetic(spec) => spec.validate()?,
            DatasetSource::Manifest(p) => {
                if !p.exists() {
                    return Err(Error::invalid(format!("manifest {} does not exist", p.display())));
                }
            }
        }
        if let Some(ckpt) = &self.model.checkpoint {
            if !ckpt.exists() {
                return Err(Error::invalid(format!("checkpoint {} does not exist", ckpt.display())));
            }
        }
        self.dataset.augmentation.validate()?;
        self.model.architecture.validate()?;
        self.model.train.validate()?;
        if !(0.0..=1.0).contains(&self.reliability.threshold) {
            return Err(Error::invalid("reliability threshold must lie in [0, 1]"));
        }
        if self.cluster.q < 2 || self.cluster.knn_k == 0 || !(self.cluster.sigma > 0.0) {
            return Err(Error::invalid("cluster settings need q >= 2, k >= 1 and sigma > 0"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn inherit_seed(v: &mut Value, path: &[&str], key: &str, seed: u64) -> Result<()> {
    let mut cur = v;
    for (i, p) in path.iter().enumerate() {
        let obj = match cur.as_object_mut() {
            Some(o) => o,
            None => return Ok(()),
        };
        // only descend into enum variants that are present
        if i > 0 && path[..i] == ["dataset", "source"] && !obj.contains_key(*p) {
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    match cur.as_object_mut() {
        Some(o) => {
            o.entry(key.to_string()).or_insert_with(|| seed.into());
            Ok(())
        }
        None => Err(Error::invalid(format!("config section `{}` must be an object", path.join(".")))),
    }
}
