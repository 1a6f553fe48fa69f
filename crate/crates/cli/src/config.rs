//! Run configuration: a TOML file with one table per concern. Every key is
//! optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use ocda_core::mixing::AugmentConfig;
use ocda_core::net::{Architecture, KlDirection, SgdConfig};
use ocda_core::pipeline::{ConsistencyGrad, Fusion, StudentInit, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("parse error at line {line}{}: {message}", field.as_ref().map(|f| format!(", field `{f}`")).unwrap_or_default())]
    Parse { line: usize, field: Option<String>, message: String },
    #[error("invalid `{field}` = {value}: must be in {bound}")]
    Validation { field: &'static str, value: String, bound: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FusionName {
    #[default]
    Verbatim,
    Negentropy,
}

impl From<FusionName> for Fusion {
    fn from(f: FusionName) -> Self {
        match f {
            FusionName::Verbatim => Fusion::Verbatim,
            FusionName::Negentropy => Fusion::NegEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlName {
    #[default]
    TargetStudent,
    StudentTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StudentInitName {
    #[default]
    Random,
    /// The teacher with the highest compound-validation mIoU.
    BestTeacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientName {
    OpenOnly,
    #[default]
    Both,
}

/// Directories of externally supplied datasets. Unset entries fall back to
/// the `synth` stage output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { source_dir: None, target_dir: None, open_dir: None, validation_dir: None, out_dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub k_true: usize,
    pub n_source: usize,
    pub n_target: usize,
    pub n_validation: usize,
    pub n_open: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, classes: 5, k_true: 3, n_source: 200, n_target: 300, n_validation: 60, n_open: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    pub bins: usize,
}

impl Default for SeparateConfig {
    fn default() -> Self {
        Self { k_min: None, k_max: None, bins: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    /// Preview pairs written per subdomain by the `mix` stage.
    pub samples: usize,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self { samples: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub iters: u64,
    pub batch_size: usize,
    /// Also train the source-only and single-model baselines.
    pub baselines: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        let s = SgdConfig::default();
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.99,
            lr0: s.lr0,
            momentum: s.momentum,
            weight_decay: s.weight_decay,
            power: s.power,
            iters: s.max_iter,
            batch_size: 2,
            baselines: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
    pub iters: u64,
    pub batch_size: usize,
    pub fusion: FusionName,
    pub kl_direction: KlName,
    pub student_init: StudentInitName,
}

impl Default for DistillConfig {
    fn default() -> Self {
        let s = SgdConfig::default();
        Self {
            lr0: s.lr0,
            momentum: s.momentum,
            weight_decay: s.weight_decay,
            power: s.power,
            iters: s.max_iter,
            batch_size: 2,
            fusion: FusionName::Verbatim,
            kl_direction: KlName::TargetStudent,
            student_init: StudentInitName::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    pub enabled: bool,
    pub steps: u64,
    /// Online learning rate as a fraction of the distillation `lr0`.
    pub lr_scale: f64,
    pub batch_size: usize,
    pub gradient: GradientName,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { enabled: true, steps: 10, lr_scale: 0.1, batch_size: 2, gradient: GradientName::Both }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub flip: bool,
    pub jitter: bool,
    pub blur: bool,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self { flip: true, jitter: true, blur: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub data: DataConfig,
    pub separate: SeparateConfig,
    pub mix: MixConfig,
    pub teacher: TeacherConfig,
    pub distill: DistillConfig,
    pub online: OnlineConfig,
    pub augment: AugmentSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn field_of(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

fn check(ok: bool, field: &'static str, value: impl ToString, bound: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Validation { field, value: value.to_string(), bound })
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            ConfigError::Parse {
                line: e.span().map_or(1, |s| line_of(text, s.start)),
                field: field_of(&message),
                message,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.teacher;
        let d = &self.distill;
        let data = &self.data;
        check(t.alpha >= 0.0 && t.alpha.is_finite(), "teacher.alpha", t.alpha, "[0, inf)")?;
        check(t.beta >= 0.0 && t.beta.is_finite(), "teacher.beta", t.beta, "[0, inf)")?;
        check((0.0..=1.0).contains(&t.lambda), "teacher.lambda", t.lambda, "[0, 1]")?;
        check(t.lr0 > 0.0 && t.lr0.is_finite(), "teacher.lr0", t.lr0, "(0, inf)")?;
        check((0.0..1.0).contains(&t.momentum), "teacher.momentum", t.momentum, "[0, 1)")?;
        check(t.weight_decay >= 0.0, "teacher.weight_decay", t.weight_decay, "[0, inf)")?;
        check(t.power >= 0.0, "teacher.power", t.power, "[0, inf)")?;
        check(t.iters >= 1, "teacher.iters", t.iters, "[1, inf)")?;
        check(t.batch_size >= 1, "teacher.batch_size", t.batch_size, "[1, inf)")?;
        check(d.lr0 > 0.0 && d.lr0.is_finite(), "distill.lr0", d.lr0, "(0, inf)")?;
        check((0.0..1.0).contains(&d.momentum), "distill.momentum", d.momentum, "[0, 1)")?;
        check(d.weight_decay >= 0.0, "distill.weight_decay", d.weight_decay, "[0, inf)")?;
        check(d.power >= 0.0, "distill.power", d.power, "[0, inf)")?;
        check(d.iters >= 1, "distill.iters", d.iters, "[1, inf)")?;
        check(d.batch_size >= 1, "distill.batch_size", d.batch_size, "[1, inf)")?;
        let o = &self.online;
        check(o.lr_scale >= 0.0 && o.lr_scale.is_finite(), "online.lr_scale", o.lr_scale, "[0, inf)")?;
        check(o.batch_size >= 1, "online.batch_size", o.batch_size, "[1, inf)")?;
        check(self.separate.bins >= 2, "separate.bins", self.separate.bins, "[2, inf)")?;
        if let Some(k) = self.separate.k_min {
            check(k >= 2, "separate.k_min", k, "[2, inf)")?;
        }
        if let (Some(lo), Some(hi)) = (self.separate.k_min, self.separate.k_max) {
            check(hi >= lo, "separate.k_max", hi, "[k_min, inf)")?;
        }
        check(data.width >= 8, "data.width", data.width, "[8, inf)")?;
        check(data.height >= 8, "data.height", data.height, "[8, inf)")?;
        check((2..=8).contains(&data.classes), "data.classes", data.classes, "[2, 8]")?;
        check((2..=6).contains(&data.k_true), "data.k_true", data.k_true, "[2, 6]")?;
        check(data.n_source >= 1, "data.n_source", data.n_source, "[1, inf)")?;
        check(data.n_target >= 3, "data.n_target", data.n_target, "[3, inf)")?;
        check(data.n_validation >= 1, "data.n_validation", data.n_validation, "[1, inf)")?;
        check(data.n_open >= 1, "data.n_open", data.n_open, "[1, inf)")?;
        Ok(())
    }

    /// Training hyperparameters for the core pipeline. `best_teacher`
    /// initialisation is resolved by the distill stage.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.teacher;
        let d = &self.distill;
        TrainConfig {
            alpha: t.alpha,
            beta: t.beta,
            ema_lambda: t.lambda,
            sgd: SgdConfig {
                lr0: t.lr0,
                momentum: t.momentum,
                weight_decay: t.weight_decay,
                max_iter: t.iters,
                power: t.power,
            },
            batch_size: t.batch_size,
            distill_sgd: SgdConfig {
                lr0: d.lr0,
                momentum: d.momentum,
                weight_decay: d.weight_decay,
                max_iter: d.iters,
                power: d.power,
            },
            distill_batch: d.batch_size,
            online_steps: if self.online.enabled { self.online.steps } else { 0 },
            online_lr_scale: self.online.lr_scale,
            online_batch: self.online.batch_size,
            fusion: d.fusion.into(),
            kl_direction: match d.kl_direction {
                KlName::TargetStudent => KlDirection::TargetStudent,
                KlName::StudentTarget => KlDirection::StudentTarget,
            },
            student_init: StudentInit::Random,
            consistency_grad: match self.online.gradient {
                GradientName::OpenOnly => ConsistencyGrad::OpenOnly,
                GradientName::Both => ConsistencyGrad::Both,
            },
            augment: AugmentConfig {
                flip: self.augment.flip,
                jitter: self.augment.jitter,
                blur: self.augment.blur,
                ..AugmentConfig::default()
            },
            arch: Architecture::standard(self.data.classes).expect("validated class count"),
            seed: self.seed,
            k_min: self.separate.k_min,
            k_max: self.separate.k_max,
            bins: self.separate.bins,
        }
    }
}
