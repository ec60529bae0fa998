//! Experiment configuration in TOML.
//!
//! Only `method` and `[benchmark]` are required; every other table and key
//! falls back to the defaults below. Unknown keys are rejected with the
//! path of the offending field.
//!
//! ```toml
//! seed = 0
//! method = "customkd"            # customkd | fitnet | soft_target | logits | none
//!
//! [benchmark]
//! kind = "uda"                   # uda | ssl | csv; generator keys sit beside `kind`
//! angle_deg = 20.0
//!
//! [teacher]
//! preset = "large"               # tiny | small | large
//! # hidden = [96, 96, 96]        # overrides the preset widths
//! # pool_fraction = 1.0          # overrides the preset pool share
//! epochs = 60
//! lr = 0.01
//!
//! [student]
//! hidden = [16, 16]
//! epochs = 40
//! lr = 0.05
//!
//! [loss]
//! lambda_u = 0.1
//! lambda_ft = 10.0
//! lambda_ftilde = 10.0
//! lambda_pred = 0.0              # must be positive for soft_target and logits
//!
//! [schedule]
//! kd_epochs = 60
//! ratio = 1                      # one customization epoch before every `ratio` KD epochs
//! lr_student = 5e-4
//! lr_proj_t = 0.05
//! lr_proj_s = 0.05
//! momentum = 0.9
//! batch_size = 32
//!
//! [kd]
//! # temperature = 4.0            # required for soft_target
//! teacher_head = "shared"        # shared | random
//! reinit_projector = false
//! use_bn = true
//!
//! [probe]
//! epochs = 40
//! lr = 0.05
//!
//! [run]
//! eval_every = 1
//! cka = true
//! # out = "runs"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SslSpec, UdaSpec};
use crate::distill::{Method, TeacherHeadMode};
use crate::error::{Error, Result};
use crate::losses::LossWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub method: Method,
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    #[serde(default)]
    pub student: StudentConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub kd: KdConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkConfig {
    Uda(UdaSpec),
    Ssl(SslSpec),
    Csv(CsvBenchmark),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvBenchmark {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherPreset {
    Tiny,
    Small,
    #[default]
    Large,
}

impl TeacherPreset {
    pub const ALL: [TeacherPreset; 3] = [TeacherPreset::Tiny, TeacherPreset::Small, TeacherPreset::Large];

    pub fn name(&self) -> &'static str {
        match self {
            TeacherPreset::Tiny => "tiny",
            TeacherPreset::Small => "small",
            TeacherPreset::Large => "large",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown teacher preset `{s}`")))
    }

    /// Hidden widths and the share of the pool used for pretraining.
    pub fn shape(&self) -> (Vec<usize>, f64) {
        match self {
            TeacherPreset::Tiny => (vec![8], 0.1),
            TeacherPreset::Small => (vec![16, 16], 0.25),
            TeacherPreset::Large => (vec![96, 96, 96], 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub preset: TeacherPreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_fraction: Option<f64>,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            preset: TeacherPreset::Large,
            hidden: None,
            pool_fraction: None,
            epochs: 60,
            lr: 0.01,
        }
    }
}

impl TeacherConfig {
    pub fn hidden(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| self.preset.shape().0)
    }

    pub fn pool_fraction(&self) -> f64 {
        self.pool_fraction.unwrap_or_else(|| self.preset.shape().1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            hidden: vec![16, 16],
            epochs: 40,
            lr: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kd_epochs: usize,
    pub ratio: usize,
    pub lr_student: f64,
    pub lr_proj_t: f64,
    pub lr_proj_s: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kd_epochs: 60,
            ratio: 1,
            lr_student: 5e-4,
            lr_proj_t: 0.05,
            lr_proj_s: 0.05,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub teacher_head: TeacherHeadMode,
    pub reinit_projector: bool,
    pub use_bn: bool,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig {
            temperature: None,
            teacher_head: TeacherHeadMode::Shared,
            reinit_projector: false,
            use_bn: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { epochs: 40, lr: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub eval_every: usize,
    pub cka: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eval_every: 1,
            cka: true,
            out: None,
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(path, format!("must be positive and finite, got {v}")))
    }
}

fn at_least_one(path: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(config_err(path, "must be at least 1"))
    }
}

fn widths(path: &str, h: &[usize]) -> Result<()> {
    if h.is_empty() || h.contains(&0) {
        return Err(config_err(path, "needs at least one layer and no zero widths"));
    }
    Ok(())
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl ExperimentConfig {
    /// A config with every default and the given method and benchmark.
    pub fn new(method: Method, benchmark: BenchmarkConfig) -> Self {
        ExperimentConfig {
            seed: 0,
            method,
            benchmark,
            teacher: TeacherConfig::default(),
            student: StudentConfig::default(),
            loss: LossWeights::default(),
            schedule: ScheduleConfig::default(),
            kd: KdConfig::default(),
            probe: ProbeConfig::default(),
            run: RunConfig::default(),
        }
    }

    /// Default domain-shift benchmark with CustomKD.
    pub fn default_uda() -> Self {
        Self::new(Method::Customkd, BenchmarkConfig::Uda(UdaSpec::default()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = match inner.span() {
                Some(span) => format!("{} (line {})", inner.message(), line_of(text, span.start)),
                None => inner.message().to_string(),
            };
            config_err(&path, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a file; a relative CSV path is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if let BenchmarkConfig::Csv(c) = &mut cfg.benchmark {
            if c.path.is_relative() {
                if let Some(dir) = path.parent() {
                    c.path = dir.join(&c.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.benchmark {
            BenchmarkConfig::Uda(s) => {
                if s.classes < 2 || s.dim < 2 {
                    return Err(config_err("benchmark", "needs at least 2 classes and 2 dims"));
                }
            }
            BenchmarkConfig::Ssl(s) => {
                if s.classes < 2 || s.dim < 2 {
                    return Err(config_err("benchmark", "needs at least 2 classes and 2 dims"));
                }
                at_least_one("benchmark.labels_per_class", s.labels_per_class)?;
            }
            BenchmarkConfig::Csv(c) => {
                if c.path.as_os_str().is_empty() {
                    return Err(config_err("benchmark.path", "must not be empty"));
                }
            }
        }
        widths("teacher.hidden", &self.teacher.hidden())?;
        let frac = self.teacher.pool_fraction();
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(config_err("teacher.pool_fraction", format!("must lie in (0, 1], got {frac}")));
        }
        at_least_one("teacher.epochs", self.teacher.epochs)?;
        positive("teacher.lr", self.teacher.lr)?;
        widths("student.hidden", &self.student.hidden)?;
        at_least_one("student.epochs", self.student.epochs)?;
        positive("student.lr", self.student.lr)?;
        self.loss
            .validate()
            .map_err(|e| config_err("loss", e.to_string()))?;
        let s = &self.schedule;
        at_least_one("schedule.kd_epochs", s.kd_epochs)?;
        at_least_one("schedule.ratio", s.ratio)?;
        at_least_one("schedule.batch_size", s.batch_size)?;
        positive("schedule.lr_student", s.lr_student)?;
        positive("schedule.lr_proj_t", s.lr_proj_t)?;
        positive("schedule.lr_proj_s", s.lr_proj_s)?;
        if !(0.0..1.0).contains(&s.momentum) {
            return Err(config_err("schedule.momentum", format!("must lie in [0, 1), got {}", s.momentum)));
        }
        at_least_one("probe.epochs", self.probe.epochs)?;
        positive("probe.lr", self.probe.lr)?;
        at_least_one("run.eval_every", self.run.eval_every)?;
        match self.method {
            Method::SoftTarget => match self.kd.temperature {
                None => return Err(config_err("kd.temperature", "required for method soft_target")),
                Some(t) => positive("kd.temperature", t)?,
            },
            _ => {
                if let Some(t) = self.kd.temperature {
                    positive("kd.temperature", t)?;
                }
            }
        }
        if self.method.needs_probe() && self.loss.lambda_pred <= 0.0 {
            return Err(config_err(
                "loss.lambda_pred",
                format!("must be positive for method {}", self.method),
            ));
        }
        Ok(())
    }

    /// Form used for hashing: presets resolved to explicit shapes, the
    /// output directory dropped, and knobs the method never reads cleared.
    pub fn canonical(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.run.out = None;
        c.teacher.hidden = Some(self.teacher.hidden());
        c.teacher.pool_fraction = Some(self.teacher.pool_fraction());
        c.teacher.preset = TeacherPreset::default();
        if c.method != Method::SoftTarget {
            c.kd.temperature = None;
        }
        let w = &mut c.loss;
        match c.method {
            Method::Customkd => w.lambda_pred = 0.0,
            Method::Fitnet => {
                w.lambda_ftilde = 0.0;
                w.lambda_pred = 0.0;
            }
            Method::None => {
                w.lambda_ft = 0.0;
                w.lambda_ftilde = 0.0;
                w.lambda_pred = 0.0;
            }
            Method::SoftTarget | Method::Logits => {
                w.lambda_u = 0.0;
                w.lambda_ft = 0.0;
                w.lambda_ftilde = 0.0;
            }
        }
        if c.method != Method::Customkd {
            let d = ScheduleConfig::default();
            c.schedule.ratio = d.ratio;
            c.schedule.lr_proj_t = d.lr_proj_t;
            let k = KdConfig::default();
            c.kd.teacher_head = k.teacher_head;
            c.kd.reinit_projector = k.reinit_projector;
            if c.loss.lambda_ft == 0.0 {
                c.kd.use_bn = k.use_bn;
            }
        }
        if c.loss.lambda_ft == 0.0 {
            c.schedule.lr_proj_s = ScheduleConfig::default().lr_proj_s;
        }
        c
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.canonical()).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }
}
