use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::adaptation::{ContinualConfig, OptimConfig, SourceConfig};
use crate::data::DomainPairConfig;
use crate::error::{Error, Result};
use crate::losses::HyperParams;
use crate::netcore::ModelConfig;

/// Which loss terms and replay are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Entropy-only adaptation on the whole target at once.
    FullTarget,
    /// Entropy-only adaptation batch by batch, no replay.
    ContinualNoBuffer,
    /// Replay buffer, mixup and the full objective.
    Conda,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FullTarget => "full-target",
            Method::ContinualNoBuffer => "continual-no-buffer",
            Method::Conda => "conda",
        }
    }
}

/// Network widths. Input width and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            hidden: m.hidden,
            feature_dim: m.feature_dim,
            bn_eps: m.bn_eps,
            bn_momentum: m.bn_momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationSection {
    pub batch_size: usize,
    pub epochs_per_batch: usize,
    pub minibatch_size: usize,
    pub optim: OptimConfig,
    pub reset_momentum: bool,
}

impl Default for AdaptationSection {
    fn default() -> Self {
        let c = ContinualConfig::default();
        Self {
            batch_size: c.batch_size,
            epochs_per_batch: c.epochs_per_batch,
            minibatch_size: c.minibatch_size,
            optim: c.optim,
            reset_momentum: c.reset_momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferSection {
    pub slots_per_class: usize,
}

impl Default for BufferSection {
    fn default() -> Self {
        Self { slots_per_class: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub batch_sizes: Vec<usize>,
    pub slots_per_class: Vec<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            batch_sizes: vec![25, 100],
            slots_per_class: vec![0, 2, 8],
        }
    }
}

/// A complete experiment description.
///
/// When `preset` names a shipped dataset, the `data` section only needs the
/// fields that differ from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub data: DomainPairConfig,
    pub model: ModelSection,
    pub source: SourceConfig,
    pub adaptation: AdaptationSection,
    pub losses: HyperParams,
    pub buffer: BufferSection,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub grid: GridSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            data: DomainPairConfig::default(),
            model: ModelSection::default(),
            source: SourceConfig::default(),
            adaptation: AdaptationSection::default(),
            losses: HyperParams::default(),
            buffer: BufferSection::default(),
            method: Method::Conda,
            seeds: (0..5).collect(),
            out_dir: PathBuf::from("runs"),
            grid: GridSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_value(value, overrides)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, overrides)
    }

    /// Applies `key=value` overrides, expands the preset, then deserializes.
    pub fn from_value(mut value: Value, overrides: &[String]) -> Result<Self> {
        if !value.is_object() {
            return Err(Error::Config("config root must be an object".into()));
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        if let Some(name) = value.get("preset").and_then(Value::as_str) {
            let base = DomainPairConfig::preset(name)
                .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
            let mut data = serde_json::to_value(base)?;
            if let Some(user) = value.get("data") {
                merge(&mut data, user.clone());
            }
            value["data"] = data;
        }
        let cfg: Self = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        Self::from_value(serde_json::to_value(self)?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config().validate()?;
        self.source.validate()?;
        self.continual_config(self.method).validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: 2,
            hidden: self.model.hidden.clone(),
            feature_dim: self.model.feature_dim,
            num_classes: self.data.classes(),
            bn_eps: self.model.bn_eps,
            bn_momentum: self.model.bn_momentum,
        }
    }

    /// The adaptation settings `method` implies. Full-target adaptation uses
    /// one batch spanning the whole target; callers fix its size.
    pub fn continual_config(&self, method: Method) -> ContinualConfig {
        let a = &self.adaptation;
        let mut c = ContinualConfig {
            batch_size: a.batch_size,
            epochs_per_batch: a.epochs_per_batch,
            minibatch_size: a.minibatch_size,
            buffer_capacity: 0,
            hp: self.losses,
            mixup: true,
            optim: a.optim,
            reset_momentum: a.reset_momentum,
        };
        match method {
            Method::Conda => {
                c.buffer_capacity = self.buffer.slots_per_class * self.data.classes();
            }
            Method::FullTarget | Method::ContinualNoBuffer => {
                c.hp.gamma1 = 0.0;
                c.hp.gamma2 = 0.0;
                c.mixup = false;
            }
        }
        c
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// `a.b.c=v`, where `v` is parsed as JSON and taken as a string otherwise.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key {path:?}")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override {path:?} descends into a non-object"))
        })?;
        node = obj.entry(*k).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {path:?} descends into a non-object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
