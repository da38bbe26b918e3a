use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::base::BaseKind;
use crate::data::{OutlierKind, SplitName};
use crate::flow::{Activation, ModelSpec, Shape};
use crate::robust::Fig1Spec;
use crate::trainer::{ClipMode, LrSchedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Fig1,
    Train,
    Stability,
    Grid,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Train => "train",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    TwoMoons {
        n: usize,
        noise_sd: f64,
    },
    Rings {
        n: usize,
        radii: Vec<f64>,
        noise_sd: f64,
    },
    /// IDX image file: optionally truncated and downsampled, then
    /// dequantized from 8 bits to `[0, 1)`.
    Idx {
        path: PathBuf,
        #[serde(default)]
        max_rows: Option<usize>,
        #[serde(default)]
        downsample: Option<[usize; 2]>,
    },
    /// A dataset cache written by `save_dataset`, used as is.
    Cache {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contamination {
    pub fraction: f64,
    pub outlier: OutlierKind,
    pub targets: Vec<SplitName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub contamination: Option<Contamination>,
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

/// Architecture knobs; the data shape comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// K: flow steps per level.
    pub steps: usize,
    /// L: levels (image data only).
    #[serde(default = "one")]
    pub levels: usize,
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    pub base: BaseKind,
}

fn one() -> usize {
    1
}

impl ModelConfig {
    pub fn spec(&self, data_shape: Shape, base: BaseKind) -> ModelSpec {
        ModelSpec {
            data_shape,
            steps: self.steps,
            levels: self.levels,
            hidden: self.hidden,
            activation: self.activation,
            base,
        }
    }
}

/// One arm of the stability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityVariant {
    pub name: String,
    pub base: BaseKind,
    #[serde(default)]
    pub clip: ClipMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub variants: Vec<StabilityVariant>,
    /// Constant learning rates, each run for every variant.
    pub lrs: Vec<f64>,
    /// Runs use seeds `seed, seed + 1, …`.
    pub seeds: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            variants: vec![
                StabilityVariant { name: "gaussian".into(), base: BaseKind::Gaussian, clip: ClipMode::None },
                StabilityVariant {
                    name: "gaussian_clip".into(),
                    base: BaseKind::Gaussian,
                    clip: ClipMode::Norm { threshold: 100.0 },
                },
                StabilityVariant { name: "student_t50".into(), base: BaseKind::StudentT { nu: 50.0 }, clip: ClipMode::None },
            ],
            lrs: vec![1e-4, 5e-3],
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Degrees of freedom per column; `"inf"` is the Gaussian base.
    #[serde(serialize_with = "ser_nus", deserialize_with = "de_nus")]
    pub nus: Vec<f64>,
    /// Fraction of rows replaced in the contaminated splits.
    pub fraction: f64,
    pub outlier: OutlierKind,
    pub seeds: usize,
    /// Clipping for the Gaussian base; other bases train unclipped.
    pub gaussian_clip: ClipMode,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nus: vec![f64::INFINITY, 20.0, 50.0, 1000.0],
            fraction: 0.01,
            outlier: OutlierKind::UniformBox { scale: 4.0 },
            seeds: 3,
            gaussian_clip: ClipMode::Norm { threshold: 100.0 },
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NuValue {
    Num(f64),
    Text(String),
}

fn ser_nus<S: Serializer>(nus: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let v: Vec<NuValue> = nus
        .iter()
        .map(|n| if n.is_infinite() { NuValue::Text("inf".into()) } else { NuValue::Num(*n) })
        .collect();
    v.serialize(s)
}

fn de_nus<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let raw = Vec::<NuValue>::deserialize(d)?;
    raw.into_iter()
        .map(|v| match v {
            NuValue::Num(n) => Ok(n),
            NuValue::Text(t) if t == "inf" || t == "infinity" => Ok(f64::INFINITY),
            NuValue::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        })
        .collect()
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub fig1: Fig1Spec,
    /// Save a checkpoint at every evaluation whose step is a multiple of this.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults of each experiment template.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let moons = DataConfig {
            source: DataSource::TwoMoons { n: 5000, noise_sd: 0.05 },
            split: default_split(),
            contamination: None,
        };
        let mut cfg = Self {
            experiment: kind,
            seed: 0,
            data: moons,
            model: ModelConfig { steps: 4, levels: 1, hidden: 64, activation: Activation::Tanh, base: BaseKind::Gaussian },
            train: TrainConfig::default(),
            stability: StabilityConfig::default(),
            grid: GridConfig::default(),
            fig1: Fig1Spec::default(),
            checkpoint_every: None,
        };
        match kind {
            ExperimentKind::Fig1 | ExperimentKind::Train => {}
            ExperimentKind::Stability => {
                cfg.data.contamination = Some(Contamination {
                    fraction: 0.02,
                    outlier: OutlierKind::UniformBox { scale: 10.0 },
                    targets: vec![SplitName::Train, SplitName::Val],
                });
                cfg.model.steps = 6;
                cfg.model.hidden = 32;
                cfg.train.max_steps = 3000;
            }
            ExperimentKind::Grid => {
                cfg.data.source = DataSource::Rings { n: 5000, radii: vec![1.0, 2.0, 3.0], noise_sd: 0.1 };
                cfg.model.steps = 4;
                cfg.model.hidden = 32;
                cfg.train.max_steps = 5000;
                cfg.train.eval_every = 500;
                cfg.train.lr_schedule = LrSchedule::Cosine { lr_start: 4e-3, lr_end: 1e-3, total_steps: 5000 };
            }
        }
        cfg
    }
}
