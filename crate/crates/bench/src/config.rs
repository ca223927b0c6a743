//! Experiment configuration, read from TOML. Unknown keys are rejected.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! metrics = ["loss", "accuracy"]      # optional
//!
//! [task]
//! kind = "synth_moons"                # synth_gaussians | synth_moons | synth_xor | idx | csv
//! count = 400
//! noise = 0.15
//! # idx: images = "...", labels = "..."; csv: path = "..."
//!
//! [model]
//! sizes = [2, 16, 16, 2]
//! activation = "relu"                 # relu | tanh | identity
//!
//! [train]
//! epochs = 60
//! batch_size = 32
//! lr = 0.1
//! momentum = 0.9                      # optional
//! weight_decay = 0.0                  # optional
//!
//! [defense]                           # optional; used by `defend`
//! steps = 2
//! epsilon = 0.05
//! p = "inf"
//! variant = "multi_step_avg"          # multi_step_avg | acrt | sam | awp
//!
//! [[sweep]]
//! method = "multi_step"               # multi_step | gradient | gaussian | uniform | quantize
//! epsilon = [0.01, 0.02]
//! p = "inf"
//!
//! [layer_probe]                       # optional; used by `layer-probe`
//! grouping = "layer"                  # layer | tensor | all
//! epsilon = 0.05
//! p = "inf"
//! steps = 4
//! ```

use std::path::{Path, PathBuf};

use paramcorrupt::constraints::{ConstraintSet, NormOrder};
use paramcorrupt::defense::{CorruptionInit, DefenseConfig, SgdConfig, Variant};
use paramcorrupt::{Activation, Head, Network};
use serde::{Deserialize, Serialize};

use crate::data::{class_count, load_csv, synth_dataset, Dataset, SynthKind};
use crate::error::{BenchError, Result};
use crate::idx::load_idx;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    pub task: TaskSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub defense: Option<DefenseSpec>,
    #[serde(default)]
    pub sweep: Vec<SweepSpec>,
    pub layer_probe: Option<LayerProbeSpec>,
    /// Default output directory.
    pub out: Option<PathBuf>,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Loss, Metric::Accuracy]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Loss,
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Loss => "loss",
            Metric::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    SynthGaussians { count: usize, noise: f64 },
    SynthMoons { count: usize, noise: f64 },
    SynthXor { count: usize, noise: f64 },
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,
}

fn default_activation() -> String {
    "relu".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseSpec {
    pub steps: usize,
    pub epsilon: f64,
    #[serde(default = "default_p")]
    pub p: String,
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub start_epoch: usize,
    #[serde(default = "default_variant")]
    pub variant: String,
    pub alpha_mix: Option<f64>,
    #[serde(default)]
    pub substitutive: bool,
    pub inner_steps: Option<usize>,
    pub input_eps: Option<f64>,
    #[serde(default)]
    pub random_init: bool,
    /// Layer indices to defend; all parameters when absent.
    pub layers: Option<Vec<usize>>,
}

fn default_p() -> String {
    "inf".into()
}

fn default_variant() -> String {
    "multi_step_avg".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSpec {
    MultiStep {
        epsilon: Vec<f64>,
        #[serde(default = "default_p")]
        p: String,
        n: Option<usize>,
        /// Steps `K`; one pass over the test split when absent.
        steps: Option<usize>,
        /// Step size; `1.5 ε / K` when absent.
        alpha: Option<f64>,
        #[serde(default = "default_probe_batch")]
        batch_size: usize,
    },
    Gradient {
        epsilon: Vec<f64>,
        #[serde(default = "default_p")]
        p: String,
        n: Option<usize>,
    },
    Gaussian {
        sigma: Vec<f64>,
    },
    Uniform {
        bound: Vec<f64>,
    },
    Quantize {
        bits: Vec<u32>,
    },
}

fn default_probe_batch() -> usize {
    32
}

impl SweepSpec {
    pub fn method(&self) -> &'static str {
        match self {
            SweepSpec::MultiStep { .. } => "multi_step",
            SweepSpec::Gradient { .. } => "gradient",
            SweepSpec::Gaussian { .. } => "gaussian",
            SweepSpec::Uniform { .. } => "uniform",
            SweepSpec::Quantize { .. } => "quantize",
        }
    }

    pub fn grid_len(&self) -> usize {
        match self {
            SweepSpec::MultiStep { epsilon, .. } | SweepSpec::Gradient { epsilon, .. } => epsilon.len(),
            SweepSpec::Gaussian { sigma } => sigma.len(),
            SweepSpec::Uniform { bound } => bound.len(),
            SweepSpec::Quantize { bits } => bits.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per layer (weights and bias).
    Layer,
    /// One group per weight matrix and per bias vector.
    Tensor,
    /// A single group holding every parameter.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerProbeSpec {
    #[serde(default = "default_grouping")]
    pub grouping: Grouping,
    pub epsilon: f64,
    #[serde(default = "default_p")]
    pub p: String,
    pub n: Option<usize>,
    pub steps: usize,
    pub alpha: Option<f64>,
    #[serde(default = "default_probe_batch")]
    pub batch_size: usize,
}

fn default_grouping() -> Grouping {
    Grouping::Layer
}

pub fn parse_norm(p: &str) -> Result<NormOrder> {
    NormOrder::parse(p).map_err(|e| BenchError::Config(format!("norm order {p:?}: {e}")))
}

fn config_err(e: paramcorrupt::Error) -> BenchError {
    BenchError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(m) => BenchError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(BenchError::Config("at least one seed is required".into()));
        }
        if self.metrics.is_empty() {
            return Err(BenchError::Config("metrics must not be empty".into()));
        }
        for (i, s) in self.sweep.iter().enumerate() {
            if s.grid_len() == 0 {
                return Err(BenchError::Config(format!(
                    "sweep entry {i} ({}) has an empty grid",
                    s.method()
                )));
            }
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(BenchError::Config(
                "train.epochs and train.batch_size must be >= 1".into(),
            ));
        }
        if !(self.train.lr > 0.0) {
            return Err(BenchError::Config("train.lr must be > 0".into()));
        }
        self.network()?;
        if let Some(d) = &self.defense {
            self.defense_config(d)?;
        }
        Ok(())
    }

    pub fn network(&self) -> Result<Network> {
        let activation = Activation::from_name(&self.model.activation)
            .ok_or_else(|| BenchError::Config(format!("unknown activation {:?}", self.model.activation)))?;
        Network::mlp(&self.model.sizes, activation, Head::SoftmaxCrossEntropy).map_err(config_err)
    }

    pub fn optimizer(&self) -> SgdConfig {
        SgdConfig {
            lr: self.train.lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
        }
    }

    pub fn defense_config(&self, d: &DefenseSpec) -> Result<DefenseConfig> {
        let p = parse_norm(&d.p)?;
        let set = ConstraintSet::new(p, d.epsilon, d.n).map_err(config_err)?;
        let variant = match d.variant.as_str() {
            "multi_step_avg" => Variant::MultiStepAvg,
            "acrt" => Variant::Acrt {
                alpha_mix: d
                    .alpha_mix
                    .ok_or_else(|| BenchError::Config("acrt needs alpha_mix".into()))?,
                substitutive: d.substitutive,
            },
            "sam" => Variant::Sam,
            "awp" => Variant::Awp {
                inner_steps: d.inner_steps.unwrap_or(d.steps.max(1)),
                input_eps: d.input_eps.unwrap_or(0.0),
            },
            other => return Err(BenchError::Config(format!("unknown defense variant {other:?}"))),
        };
        let network = self.network()?;
        let partition = match &d.layers {
            Some(layers) => Some(network.layer_partition(layers).map_err(config_err)?),
            None => None,
        };
        let cfg = DefenseConfig {
            steps: d.steps,
            alpha: d.alpha,
            set,
            start_epoch: d.start_epoch,
            partition,
            variant,
            init: if d.random_init {
                CorruptionInit::Boundary
            } else {
                CorruptionInit::Zero
            },
        };
        cfg.validate(network.param_count()).map_err(config_err)?;
        Ok(cfg)
    }

    /// Builds the dataset; synthetic tasks and the split depend on `seed`.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        let data = match &self.task {
            TaskSpec::SynthGaussians { count, noise } => synth_dataset(SynthKind::Gaussians, *count, *noise, seed)?,
            TaskSpec::SynthMoons { count, noise } => synth_dataset(SynthKind::Moons, *count, *noise, seed)?,
            TaskSpec::SynthXor { count, noise } => synth_dataset(SynthKind::Xor, *count, *noise, seed)?,
            TaskSpec::Idx { images, labels } => {
                let all = load_idx(images, labels)?;
                let classes = class_count(&all);
                Dataset::split(all, classes, seed)?
            }
            TaskSpec::Csv { path } => {
                let all = load_csv(path)?;
                let classes = class_count(&all);
                Dataset::split(all, classes, seed)?
            }
        };
        let sizes = &self.model.sizes;
        if data.input_dim() != sizes[0] {
            return Err(BenchError::Data(format!(
                "dataset has {} features, model expects {}",
                data.input_dim(),
                sizes[0]
            )));
        }
        if data.classes > *sizes.last().expect("validated") {
            return Err(BenchError::Data(format!(
                "dataset has {} classes, model outputs {}",
                data.classes,
                sizes.last().expect("validated")
            )));
        }
        Ok(data)
    }
}
