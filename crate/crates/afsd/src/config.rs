//! Run configuration.
//!
//! Configs are TOML documents with one table per concern. Unknown keys are
//! rejected at parse time and [`Config::validate`] reports every
//! out-of-range field at once. Each field carries a provenance tag:
//! `published` for values fixed by the method description, `artifact` for
//! choices this implementation had to make.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AfsdError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Clip length in frames.
    pub clip_length: usize,
    /// Overlap in frames between adjacent training clips.
    pub train_overlap: usize,
    /// Overlap in frames between adjacent test clips.
    pub test_overlap: usize,
    /// When positive, every video is resampled to this many frames and
    /// processed as a single clip.
    pub resample_frames: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Mean,
    Conv,
    Stack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub num_levels: usize,
    /// Stride of the input projection, in feature steps.
    pub level0_stride: usize,
    pub groups: usize,
    pub pool: PoolMode,
    /// Convolutions applied after upsampling into the frame-level feature.
    pub frame_convs: usize,
    /// Minimum coarse proposal width, in frames.
    pub width_floor: f64,
    pub init_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityMode {
    /// Predicted tIoU of the refined proposal.
    Quality,
    /// One-dimensional centerness of the anchor inside its ground truth.
    Centerness,
    /// No quality branch: the term is dropped and eta is fixed to 1.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActNorm {
    /// Channel mean of tanh, fed to BCE directly.
    Tanh,
    /// Channel mean of tanh mapped affinely from (-1, 1) to (0, 1).
    TanhAffine,
    Clip01,
    Minmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub delta_a: f64,
    pub delta_b: f64,
    /// delta_b used when pooling for the contrastive term.
    pub delta_b_con: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    /// tIoU a coarse proposal must exceed to become a refined positive.
    pub refine_tiou: f64,
    pub quality: QualityMode,
    pub act_norm: ActNorm,
    /// Neighbourhood radius of the boundary indicators, in frame-level steps.
    pub act_radius: usize,
    pub bcl: bool,
    pub trip_margin: f64,
    /// Also use the start feature of the second fragment as an anchor.
    pub trip_symmetric: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Stop after this many detection steps; 0 means no limit.
    pub max_steps: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmsKind {
    Linear,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub nms: NmsKind,
    pub nms_threshold: f64,
    pub nms_sigma: f64,
    pub score_floor: f64,
    /// Candidates below this score are not decoded.
    pub score_threshold: f64,
    /// Per-clip candidate cap before suppression.
    pub top_k: usize,
    pub max_per_video: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub train_videos: usize,
    pub test_videos: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub frames_per_step: f64,
    pub fps: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub min_action: usize,
    pub max_action: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    /// Signal amplitude relative to unit background noise; 0 plants labels
    /// with no signal at all.
    pub snr: f64,
    /// Feature steps carrying the onset and offset signatures.
    pub edge_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Published,
    Artifact,
}

impl Provenance {
    pub fn tag(self) -> &'static str {
        match self {
            Provenance::Published => "published",
            Provenance::Artifact => "artifact",
        }
    }
}

/// Fields whose defaults come from the published method; everything else
/// is an artifact choice.
const PUBLISHED: &[&str] = &[
    "data.clip_length",
    "data.train_overlap",
    "data.test_overlap",
    "data.resample_frames",
    "model.pool",
    "loss.lambda",
    "loss.gamma",
    "loss.delta_a",
    "loss.delta_b",
    "loss.delta_b_con",
    "loss.refine_tiou",
    "loss.quality",
    "loss.act_norm",
    "loss.bcl",
    "loss.trip_margin",
    "train.epochs",
    "train.lr",
    "train.weight_decay",
    "train.batch_size",
    "infer.nms_threshold",
    "eval.thresholds",
];

pub fn provenance(key: &str) -> Provenance {
    if PUBLISHED.contains(&key) {
        Provenance::Published
    } else {
        Provenance::Artifact
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Default for Config {
    fn default() -> Self {
        Config::thumos()
    }
}

impl Config {
    pub fn thumos() -> Self {
        Config {
            data: DataConfig {
                clip_length: 256,
                train_overlap: 30,
                test_overlap: 128,
                resample_frames: 0,
            },
            model: ModelConfig {
                channels: 256,
                num_levels: 6,
                level0_stride: 1,
                groups: 8,
                pool: PoolMode::Max,
                frame_convs: 2,
                width_floor: 1.0,
                init_seed: 0,
            },
            loss: LossConfig {
                lambda: 10.0,
                gamma: 1.0,
                delta_a: 4.0,
                delta_b: 10.0,
                delta_b_con: 100.0,
                focal_alpha: 0.25,
                focal_gamma: 2.0,
                refine_tiou: 0.5,
                quality: QualityMode::Quality,
                act_norm: ActNorm::Tanh,
                act_radius: 2,
                bcl: true,
                trip_margin: 1.0,
                trip_symmetric: false,
            },
            train: TrainConfig {
                epochs: 16,
                lr: 1e-5,
                weight_decay: 1e-3,
                batch_size: 1,
                beta1: 0.9,
                beta2: 0.999,
                adam_eps: 1e-8,
                grad_clip: 0.0,
                max_steps: 0,
                seed: 0,
            },
            infer: InferConfig {
                nms: NmsKind::Linear,
                nms_threshold: 0.5,
                nms_sigma: 0.5,
                score_floor: 1e-4,
                score_threshold: 1e-3,
                top_k: 2000,
                max_per_video: 100,
            },
            eval: EvalConfig {
                thresholds: vec![0.3, 0.4, 0.5, 0.6, 0.7],
            },
            synth: SynthConfig {
                train_videos: 20,
                test_videos: 5,
                classes: 3,
                feature_dim: 16,
                frames_per_step: 4.0,
                fps: 30.0,
                min_frames: 384,
                max_frames: 768,
                min_action: 24,
                max_action: 120,
                min_actions: 2,
                max_actions: 5,
                snr: 1.0,
                edge_steps: 2,
            },
        }
    }

    pub fn activitynet() -> Self {
        let mut cfg = Config::thumos();
        cfg.data.clip_length = 768;
        cfg.data.resample_frames = 768;
        cfg.model.num_levels = 7;
        cfg.loss.lambda = 1.0;
        cfg.infer.nms_threshold = 0.85;
        cfg.eval.thresholds = vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
        cfg
    }

    /// Parses a config document. A `provenance` table, as written by
    /// [`Config::resolved_toml`], is accepted and ignored.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| AfsdError::Config(e.to_string()))?;
        table.remove("provenance");
        Config::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml_str(&text)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| AfsdError::Config(e.to_string()))
    }

    fn to_table(&self) -> toml::Table {
        match toml::Value::try_from(self) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("config always serializes to a table"),
        }
    }

    /// Applies a `section.field=value` override. Values are parsed as TOML
    /// literals, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| AfsdError::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| AfsdError::Config(format!("override key `{key}` needs section.field")))?;
        let mut table = self.to_table();
        let slot = table
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .and_then(|s| s.get_mut(field))
            .ok_or_else(|| AfsdError::Config(format!("unknown key `{key}`")))?;
        let mut value = parse_literal(raw);
        if let (toml::Value::Float(_), toml::Value::Integer(i)) = (&*slot, &value) {
            value = toml::Value::Float(*i as f64);
        }
        *slot = value;
        *self = Config::from_table(table).map_err(|e| AfsdError::Config(format!("override `{key}`: {e}")))?;
        Ok(())
    }

    /// The config as TOML followed by a `provenance` table tagging every
    /// field.
    pub fn resolved_toml(&self) -> String {
        let mut table = self.to_table();
        let mut tags = toml::Table::new();
        for (section, fields) in &table {
            if let Some(fields) = fields.as_table() {
                for field in fields.keys() {
                    let key = format!("{section}.{field}");
                    let tag = provenance(&key).tag().to_string();
                    tags.insert(key, toml::Value::String(tag));
                }
            }
        }
        table.insert("provenance".into(), toml::Value::Table(tags));
        toml::to_string(&table).expect("config tables always serialize")
    }

    /// Every field-level problem, empty when the config is usable.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, field: &str, message: &str| {
            if !ok {
                errs.push(FieldError {
                    field: field.to_string(),
                    message: message.to_string(),
                });
            }
        };
        let d = &self.data;
        check(d.clip_length > 0, "data.clip_length", "must be positive");
        check(
            d.train_overlap < d.clip_length,
            "data.train_overlap",
            "must be below clip_length",
        );
        check(
            d.test_overlap < d.clip_length,
            "data.test_overlap",
            "must be below clip_length",
        );

        let m = &self.model;
        check(m.channels > 0, "model.channels", "must be positive");
        check(m.num_levels > 0, "model.num_levels", "must be positive");
        check(m.level0_stride > 0, "model.level0_stride", "must be positive");
        check(
            m.groups > 0 && m.channels.is_multiple_of(m.groups.max(1)),
            "model.groups",
            "must divide model.channels",
        );
        check(m.width_floor > 0.0, "model.width_floor", "must be positive");

        let l = &self.loss;
        check(l.lambda >= 0.0, "loss.lambda", "must be non-negative");
        check(l.gamma >= 0.0, "loss.gamma", "must be non-negative");
        check(l.delta_a > 0.0, "loss.delta_a", "must be positive");
        check(l.delta_b > 0.0, "loss.delta_b", "must be positive");
        check(l.delta_b_con > 0.0, "loss.delta_b_con", "must be positive");
        check(
            (0.0..=1.0).contains(&l.focal_alpha),
            "loss.focal_alpha",
            "must lie in [0, 1]",
        );
        check(l.focal_gamma >= 0.0, "loss.focal_gamma", "must be non-negative");
        check(
            (0.0..1.0).contains(&l.refine_tiou),
            "loss.refine_tiou",
            "must lie in [0, 1)",
        );
        check(l.trip_margin >= 0.0, "loss.trip_margin", "must be non-negative");

        let t = &self.train;
        check(t.epochs > 0, "train.epochs", "must be positive");
        check(t.lr > 0.0, "train.lr", "must be positive");
        check(t.weight_decay >= 0.0, "train.weight_decay", "must be non-negative");
        check(t.batch_size == 1, "train.batch_size", "only batch size 1 is supported");
        check((0.0..1.0).contains(&t.beta1), "train.beta1", "must lie in [0, 1)");
        check((0.0..1.0).contains(&t.beta2), "train.beta2", "must lie in [0, 1)");
        check(t.adam_eps > 0.0, "train.adam_eps", "must be positive");
        check(t.grad_clip >= 0.0, "train.grad_clip", "must be non-negative");

        let i = &self.infer;
        check(
            (0.0..=1.0).contains(&i.nms_threshold),
            "infer.nms_threshold",
            "must lie in [0, 1]",
        );
        check(i.nms_sigma > 0.0, "infer.nms_sigma", "must be positive");
        check(i.score_floor >= 0.0, "infer.score_floor", "must be non-negative");
        check(
            i.score_threshold >= 0.0,
            "infer.score_threshold",
            "must be non-negative",
        );
        check(i.top_k > 0, "infer.top_k", "must be positive");
        check(i.max_per_video > 0, "infer.max_per_video", "must be positive");

        let th = &self.eval.thresholds;
        check(!th.is_empty(), "eval.thresholds", "must not be empty");
        check(
            th.iter().all(|&v| v > 0.0 && v <= 1.0) && th.windows(2).all(|w| w[0] < w[1]),
            "eval.thresholds",
            "must be strictly increasing within (0, 1]",
        );

        let s = &self.synth;
        check(s.classes > 0, "synth.classes", "must be positive");
        check(s.feature_dim > 0, "synth.feature_dim", "must be positive");
        check(s.frames_per_step > 0.0, "synth.frames_per_step", "must be positive");
        check(s.fps > 0.0, "synth.fps", "must be positive");
        check(
            s.min_frames > 0 && s.min_frames <= s.max_frames,
            "synth.min_frames",
            "must be in 1..=max_frames",
        );
        check(
            s.min_action > 0 && s.min_action <= s.max_action,
            "synth.min_action",
            "must be in 1..=max_action",
        );
        check(
            s.max_action < s.min_frames,
            "synth.max_action",
            "must be shorter than min_frames",
        );
        check(
            s.min_actions <= s.max_actions,
            "synth.min_actions",
            "must not exceed max_actions",
        );
        check(s.snr >= 0.0, "synth.snr", "must be non-negative");
        errs
    }

    pub fn validated(self) -> Result<Self> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            let lines: Vec<String> = errs.iter().map(ToString::to_string).collect();
            Err(AfsdError::Config(lines.join("; ")))
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    toml::from_str::<BTreeMap<String, toml::Value>>(&doc)
        .ok()
        .and_then(|mut m| m.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
