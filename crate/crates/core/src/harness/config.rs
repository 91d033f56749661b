use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{NoiseSchedule, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::operators::{
    gaussian_kernel, motion_kernel, Blur, Downsample, DynamicRangeClip, ForwardOperator, FourierMask, Mask, NoiseModel,
    PhaseRetrieval, RowPattern,
};
use crate::optim::OptimizerKind;
use crate::samplers::{default_delta, Mapping, SamplerConfig, Selector, Variant};

use super::checks::CheckSpec;
use super::dataset::DatasetSpec;

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "SITCOM_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    pub t_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { t_max: 1000, beta_min: 1e-4, beta_max: 0.02 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_max, self.beta_min, self.beta_max)
    }
}

/// Score-model training budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub seed: u64,
    /// Training-set size drawn from the dataset seed.
    pub samples: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { iters: t.iters, batch: t.batch, lr: t.lr, lr_floor: t.lr_floor, seed: t.seed, samples: 4096 }
    }
}

impl TrainSpec {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { iters: self.iters, batch: self.batch, lr: self.lr, seed: self.seed, lr_floor: self.lr_floor }
    }
}

fn default_hidden() -> usize {
    128
}
fn default_depth() -> usize {
    3
}
fn default_frequencies() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Trained noise-prediction MLP. With `checkpoint` set, the file is loaded
    /// when it exists and written after training otherwise.
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_depth")]
        depth: usize,
        #[serde(default = "default_frequencies")]
        frequencies: usize,
        #[serde(default)]
        train: TrainSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<PathBuf>,
    },
    /// Exact noise predictor of a `gmm-2d` mixture.
    AnalyticGmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    BoxMask {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    RandomMask {
        keep_prob: f64,
        seed: u64,
    },
    /// Keeps exactly `m` entries.
    RandomCount {
        m: usize,
        seed: u64,
    },
    GaussianBlur {
        size: usize,
        sigma: f64,
    },
    MotionBlur {
        size: usize,
        seed: u64,
    },
    Downsample {
        factor: usize,
    },
    FourierMask {
        pattern: RowPattern,
        acceleration: usize,
        seed: u64,
    },
    PhaseRetrieval {
        oversample: f64,
    },
    DynamicRangeClip {
        factor: f64,
    },
}

impl OperatorSpec {
    pub fn build(&self, shape: &[usize]) -> Result<Arc<dyn ForwardOperator>> {
        Ok(match *self {
            Self::Identity => Arc::new(Mask::identity(shape)?),
            Self::BoxMask { top, left, height, width } => Arc::new(Mask::boxed(shape, top, left, height, width)?),
            Self::RandomMask { keep_prob, seed } => Arc::new(Mask::random(shape, keep_prob, seed)?),
            Self::RandomCount { m, seed } => Arc::new(Mask::random_count(shape, m, seed)?),
            Self::GaussianBlur { size, sigma } => Arc::new(Blur::new(shape, gaussian_kernel(size, sigma)?)?),
            Self::MotionBlur { size, seed } => Arc::new(Blur::new(shape, motion_kernel(size, seed)?)?),
            Self::Downsample { factor } => Arc::new(Downsample::new(shape, factor)?),
            Self::FourierMask { pattern, acceleration, seed } => {
                Arc::new(FourierMask::new(shape, pattern, acceleration, seed)?)
            }
            Self::PhaseRetrieval { oversample } => Arc::new(PhaseRetrieval::new(shape, oversample)?),
            Self::DynamicRangeClip { factor } => Arc::new(DynamicRangeClip::new(shape, factor)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSpec {
    Gaussian { sigma_y: f64 },
    Poisson { lambda_y: f64 },
}

impl NoiseSpec {
    pub fn model(&self) -> NoiseModel {
        match *self {
            Self::Gaussian { .. } => NoiseModel::Gaussian,
            Self::Poisson { lambda_y } => NoiseModel::Poisson { lambda_y },
        }
    }

    /// Requested Gaussian level; Poisson problems record their realized level.
    pub fn sigma_y(&self) -> f64 {
        match *self {
            Self::Gaussian { sigma_y } => sigma_y,
            Self::Poisson { .. } => 0.0,
        }
    }
}

/// One sampler to run. Unset fields take the defaults for the problem:
/// `N = 20`, `K = 20`, `lambda = 0` (1 for phase retrieval), `gamma = 0.01`,
/// Adam and `delta = (sigma_y + 0.001) sqrt(m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    /// Row label in the outputs; defaults to the variant name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Absolute threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Threshold as a multiple of `sigma_y sqrt(m)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<Mapping>,
}

impl SamplerSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            name: None,
            variant,
            n_steps: None,
            k_max: None,
            lambda: None,
            delta: None,
            delta_scale: None,
            gamma: None,
            optimizer: None,
            mapping: None,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.variant.label().to_string())
    }

    /// Concrete configuration for a problem with operator `op` at noise
    /// level `sigma_y`, after applying a sweep cell.
    pub fn resolve(&self, cell: &Cell, op: &dyn ForwardOperator, sigma_y: f64, seed: u64) -> Result<SamplerConfig> {
        let d = SamplerConfig::for_operator(op, sigma_y, seed);
        let m = op.m();
        let delta_scale = cell.delta_scale.or(self.delta_scale);
        if self.delta.is_some() && delta_scale.is_some() {
            return Err(invalid(format!("sampler {} sets both delta and delta_scale", self.label())));
        }
        let delta = match (self.delta, delta_scale) {
            (Some(abs), None) => abs,
            (None, Some(s)) => s * sigma_y * (m as f64).sqrt(),
            _ => default_delta(m, sigma_y),
        };
        let cfg = SamplerConfig {
            n_steps: cell.n_steps.or(self.n_steps).unwrap_or(d.n_steps),
            k_max: cell.k_max.or(self.k_max).unwrap_or(d.k_max),
            lambda: cell.lambda.or(self.lambda).unwrap_or(d.lambda),
            delta,
            gamma: self.gamma.unwrap_or(d.gamma),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            seed,
            variant: self.variant,
            mapping: self.mapping.unwrap_or(d.mapping),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NkGrid {
    pub n: Vec<usize>,
    pub k: Vec<usize>,
}

/// Grids for the ablation axes. `delta` lists multiples of `sigma_y sqrt(m)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_k: Option<NkGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    NK,
    Lambda,
    Delta,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n-k" => Ok(Self::NK),
            "lambda" => Ok(Self::Lambda),
            "delta" => Ok(Self::Delta),
            other => Err(invalid(format!("unknown sweep axis {other:?}; expected n-k, lambda or delta"))),
        }
    }
}

/// Overrides applied to every sampler in one grid cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Cell {
    pub n_steps: Option<usize>,
    pub k_max: Option<usize>,
    pub lambda: Option<f64>,
    pub delta_scale: Option<f64>,
}

impl Cell {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(n) = self.n_steps {
            parts.push(format!("n={n}"));
        }
        if let Some(k) = self.k_max {
            parts.push(format!("k={k}"));
        }
        if let Some(l) = self.lambda {
            parts.push(format!("lambda={l}"));
        }
        if let Some(d) = self.delta_scale {
            parts.push(format!("delta={d}"));
        }
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join(";")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestOfSpec {
    pub k: usize,
    #[serde(default)]
    pub selector: Selector,
}

fn one() -> usize {
    1
}
fn default_cap() -> usize {
    10_000
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub model: ModelSpec,
    pub operator: OperatorSpec,
    pub noise: NoiseSpec,
    pub samplers: Vec<SamplerSpec>,
    #[serde(default)]
    pub sweep: SweepSpec,
    /// Test signals, drawn from the dataset with `seed`.
    #[serde(default = "one")]
    pub problems: usize,
    /// Sampler seeds per problem.
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_of: Option<BestOfSpec>,
    /// Seed for test signals, measurement noise and sampler noise.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Upper bound on the number of sampler runs.
    #[serde(default = "default_cap")]
    pub max_runs: usize,
    /// Write PGM images for 2-D signals.
    #[serde(default = "yes")]
    pub images: bool,
    /// Assertions evaluated on the summary; the CLI fails when one does.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<CheckSpec>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.schedule.build()?;
        if matches!(self.model, ModelSpec::AnalyticGmm) {
            self.dataset.prior()?;
        }
        if let ModelSpec::Mlp { hidden, depth, frequencies, train, .. } = &self.model {
            if *hidden == 0 || *depth == 0 || *frequencies == 0 || train.samples == 0 || train.batch == 0 {
                return Err(Error::Config("MLP sizes and training budget must be positive".into()));
            }
        }
        let op = self.operator.build(&self.dataset.kind.signal_shape())?;
        match self.noise {
            NoiseSpec::Gaussian { sigma_y } if !(sigma_y >= 0.0 && sigma_y.is_finite()) => {
                return Err(Error::Config(format!("sigma_y must be finite and non-negative, got {sigma_y}")))
            }
            NoiseSpec::Poisson { lambda_y } if !(lambda_y > 0.0 && lambda_y.is_finite()) => {
                return Err(Error::Config(format!("lambda_y must be positive, got {lambda_y}")))
            }
            _ => {}
        }
        if self.problems == 0 || self.repetitions == 0 {
            return Err(Error::Config("problems and repetitions must be at least 1".into()));
        }
        if let Some(b) = self.best_of {
            if b.k == 0 {
                return Err(Error::Config("best_of.k must be at least 1".into()));
            }
        }
        let mut labels = std::collections::HashSet::new();
        for s in &self.samplers {
            if !labels.insert(s.label()) {
                return Err(Error::Config(format!("duplicate sampler name {:?}", s.label())));
            }
            // Typical values only; delta and sigma are problem-dependent.
            s.resolve(&Cell::default(), op.as_ref(), 0.05, 0)
                .map_err(|e| Error::Config(format!("sampler {}: {e}", s.label())))?;
        }
        let names: Vec<String> = self.samplers.iter().map(SamplerSpec::label).collect();
        for c in &self.checks {
            c.validate(&names)?;
        }
        for (axis, grid) in [
            ("n_k.n", self.sweep.n_k.as_ref().map(|g| g.n.len())),
            ("n_k.k", self.sweep.n_k.as_ref().map(|g| g.k.len())),
            ("lambda", self.sweep.lambda.as_ref().map(Vec::len)),
            ("delta", self.sweep.delta.as_ref().map(Vec::len)),
        ] {
            if grid == Some(0) {
                return Err(Error::Config(format!("sweep axis {axis} is empty")));
            }
        }
        Ok(())
    }

    /// Cells of a sweep along `axis`, or the single base cell.
    pub fn cells(&self, axis: Option<SweepAxis>) -> Result<Vec<Cell>> {
        let missing = |name: &str| Error::Config(format!("sweep axis {name} is not configured"));
        Ok(match axis {
            None => vec![Cell::default()],
            Some(SweepAxis::NK) => {
                let g = self.sweep.n_k.as_ref().ok_or_else(|| missing("n_k"))?;
                let mut cells = Vec::new();
                for &n in &g.n {
                    for &k in &g.k {
                        cells.push(Cell { n_steps: Some(n), k_max: Some(k), ..Cell::default() });
                    }
                }
                cells
            }
            Some(SweepAxis::Lambda) => self
                .sweep
                .lambda
                .as_ref()
                .ok_or_else(|| missing("lambda"))?
                .iter()
                .map(|&l| Cell { lambda: Some(l), ..Cell::default() })
                .collect(),
            Some(SweepAxis::Delta) => self
                .sweep
                .delta
                .as_ref()
                .ok_or_else(|| missing("delta"))?
                .iter()
                .map(|&d| Cell { delta_scale: Some(d), ..Cell::default() })
                .collect(),
        })
    }

    /// Number of sampler invocations for a grid of `cells` cells.
    pub fn run_count(&self, cells: usize) -> usize {
        let k = self.best_of.map_or(1, |b| b.k);
        self.samplers.len() * cells * self.problems * self.repetitions * k
    }

    /// `output_dir`, placed under `$SITCOM_OUTPUT_ROOT` when it is relative
    /// and the variable is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Seed of the sampler for a problem and repetition; shared by every
    /// sampler and sweep cell so comparisons are paired.
    pub fn run_seed(&self, problem: usize, repetition: usize) -> u64 {
        let k = self.best_of.map_or(1, |b| b.k) as u64;
        let slot = (problem * self.repetitions + repetition) as u64;
        self.seed.wrapping_mul(1_000_003).wrapping_add(slot * k)
    }

    /// Seed of the measurement noise of a problem.
    pub fn problem_seed(&self, problem: usize) -> u64 {
        self.seed.wrapping_add(problem as u64)
    }
}

/// Everything that determines one run's numbers.
#[derive(Serialize)]
struct FingerprintInput<'a> {
    dataset: &'a DatasetSpec,
    schedule: &'a ScheduleSpec,
    model: &'a ModelSpec,
    operator: &'a OperatorSpec,
    noise: &'a NoiseSpec,
    problem: usize,
    test_seed: u64,
    sampler: &'a SamplerConfig,
    best_of: Option<BestOfSpec>,
}

/// Hex SHA-256 of the resolved configuration of one run. Output locations
/// and run caps do not enter.
pub fn fingerprint(cfg: &ExperimentConfig, problem: usize, sampler: &SamplerConfig) -> String {
    let input = FingerprintInput {
        dataset: &cfg.dataset,
        schedule: &cfg.schedule,
        model: &cfg.model,
        operator: &cfg.operator,
        noise: &cfg.noise,
        problem,
        test_seed: cfg.seed,
        sampler,
        best_of: cfg.best_of,
    };
    let bytes = serde_json::to_vec(&input).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
