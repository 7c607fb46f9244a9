//! JSON run configuration.
//!
//! Every section has defaults, so a config file only lists what it changes.
//! Unknown keys anywhere are rejected. Overrides use dotted paths
//! (`replay.mode=finetune`) and are applied to the JSON tree before parsing;
//! values parse as JSON when possible and as strings otherwise.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::{pooling_factor, StreamConfig};
use crate::error::{Error, Result};
use crate::losses::{AgentConfig, CalibrationMode, ReplayMode};
use crate::nn::ModelSpec;
use crate::sampler::SamplerConfig;
use crate::seed::{tag, SeedTree};
use crate::trainer::SessionConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    /// Hidden tanh layer width; 0 disables it.
    pub hidden: usize,
    pub segments: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 32,
            hidden: 64,
            segments: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub lambda: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 15,
            lr: 1e-3,
            batch: 12,
            lambda: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySection {
    pub mode: ReplayMode,
    pub calibration: CalibrationMode,
    pub uniform_u: f64,
    pub alpha: f64,
    pub ls_epsilon: f64,
}

impl Default for ReplaySection {
    fn default() -> Self {
        let agent = AgentConfig::default();
        ReplaySection {
            mode: ReplayMode::ScAgent,
            calibration: agent.calibration,
            uniform_u: agent.uniform_u,
            alpha: agent.alpha,
            ls_epsilon: agent.ls_epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemorySection {
    pub per_class: usize,
    pub multiplier: usize,
    pub keyframes: usize,
    pub gamma: f64,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection {
            per_class: 20,
            multiplier: 1,
            keyframes: 16,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSection {
    /// Spatial resolution scale of incremental sessions.
    pub delta: f64,
    /// Also scale the base session.
    pub delta_everywhere: bool,
}

impl Default for InputSection {
    fn default() -> Self {
        InputSection {
            delta: 0.5,
            delta_everywhere: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub stream: StreamConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub replay: ReplaySection,
    pub memory: MemorySection,
    pub input: InputSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// Derived key that re-splits the stream into a given number of tasks.
pub const TASKS_KEY: &str = "stream.tasks";

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "{key}: `{}` is not a section",
                parts[..i].join(".")
            ))
        })?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key `{key}`")))
}

/// Splits `key=value`.
pub fn parse_override(raw: &str) -> Result<(String, String)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not of the form key=value")))?;
    if k.trim().is_empty() {
        return Err(Error::Config(format!("override `{raw}` has an empty key")));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_json_with_overrides(text, &[])
    }

    /// Parses a config and applies `key=value` overrides in order.
    pub fn from_json_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut root: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if !root.is_object() {
            return Err(Error::Config("config root must be a JSON object".into()));
        }
        let mut tasks = None;
        for (k, v) in overrides {
            if k == TASKS_KEY {
                let n: usize = v
                    .parse()
                    .map_err(|_| Error::Config(format!("{TASKS_KEY}: `{v}` is not a count")))?;
                tasks = Some(n);
            } else {
                set_path(&mut root, k, parse_value(v))?;
            }
        }
        let mut cfg = Self::from_value(root)?;
        if let Some(n) = tasks {
            cfg.stream = cfg.stream.with_task_count(n)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn from_value(root: Value) -> Result<Self> {
        serde_path_to_error::deserialize(root).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.inner()))
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        let positive = [
            ("model.embed_dim", self.model.embed_dim),
            ("model.segments", self.model.segments),
            ("train.epochs", self.train.epochs),
            ("train.batch", self.train.batch),
            ("memory.per_class", self.memory.per_class),
            ("memory.multiplier", self.memory.multiplier),
            ("memory.keyframes", self.memory.keyframes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name}: must be at least 1")));
            }
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config("train.lr: must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train.lambda) {
            return Err(Error::Config("train.lambda: must lie in [0, 1]".into()));
        }
        if !(self.memory.gamma > 0.0 && self.memory.gamma <= 1.0) {
            return Err(Error::Config("memory.gamma: must lie in (0, 1]".into()));
        }
        if self.memory.keyframes > self.stream.frames_per_clip {
            return Err(Error::Config(format!(
                "memory.keyframes: {} exceeds stream.frames_per_clip {}",
                self.memory.keyframes, self.stream.frames_per_clip
            )));
        }
        let k = pooling_factor(self.input.delta)?;
        if !self.stream.height.is_multiple_of(k) || !self.stream.width.is_multiple_of(k) {
            return Err(Error::Config(format!(
                "input.delta: {} needs stream height and width divisible by {k}",
                self.input.delta
            )));
        }
        self.agent().validate()
    }

    /// Stream parameters with the derived stream seed filled in.
    pub fn resolved_stream(&self) -> StreamConfig {
        StreamConfig {
            seed: SeedTree::new(self.seed).child(tag::STREAM).value(),
            ..self.stream.clone()
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            frame_shape: self.stream.frame_shape(),
            hidden: self.model.hidden,
            embed_dim: self.model.embed_dim,
        }
    }

    pub fn agent(&self) -> AgentConfig {
        AgentConfig {
            alpha: self.replay.alpha,
            calibration: self.replay.calibration,
            uniform_u: self.replay.uniform_u,
            learnable_raw: Vec::new(),
            ls_epsilon: self.replay.ls_epsilon,
        }
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            epochs: self.train.epochs,
            lr: self.train.lr,
            batch_size: self.train.batch,
            lambda: self.train.lambda,
            mode: self.replay.mode,
            agent: self.agent(),
            delta: self.input.delta,
            delta_everywhere: self.input.delta_everywhere,
            sampler: SamplerConfig {
                keyframes: self.memory.keyframes,
                gamma: self.memory.gamma,
            },
            per_class: self.memory.per_class,
            multiplier: self.memory.multiplier,
            segments: self.model.segments,
            seed: self.seed,
        }
    }
}
