//! The triple-consistent sampler and its baselines.
//!
//! Every sampler draws `x_N` from the init stream and exactly one noise
//! tensor per step from the step stream (see [`crate::rng`]), so runs with
//! the same seed see the same noise whatever the variant.

mod baselines;
mod best_of;
mod inner;
mod sitcom;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Result};
use crate::operators::{ForwardOperator, ProblemInstance};
use crate::optim::OptimizerKind;
use crate::rng::{normal_tensor, stream, Stream};
use crate::score::ScoreModel;
use crate::tensor::Tensor;

pub use baselines::{ddpm_unconditional_sample, dps_resample_sample, dps_sample, no_backward_sample};
pub use best_of::{best_of_k, BestOfK, Selector};
pub use inner::{inner_optimize, objective_graph, sitcom_objective, InnerResult, ObjectiveValue};
pub use sitcom::{sitcom_ode_sample, sitcom_sample};

/// Step size of the guidance term in the DPS baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ZetaSchedule {
    Constant {
        zeta: f64,
    },
    /// `zeta_i = zeta0 / ||y - A(xhat0)||`.
    Normalized {
        zeta0: f64,
    },
}

impl ZetaSchedule {
    pub(crate) fn at(&self, residual_norm: f64) -> f64 {
        match *self {
            Self::Constant { zeta } => zeta,
            Self::Normalized { zeta0 } => {
                if residual_norm > 0.0 {
                    zeta0 / residual_norm
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Variant {
    Sitcom,
    SitcomOde { n_ode: usize },
    NoBackward,
    Dps { zeta: ZetaSchedule },
    DpsResample { zeta: ZetaSchedule },
    DdpmUnconditional,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Sitcom => "sitcom",
            Self::SitcomOde { .. } => "sitcom-ode",
            Self::NoBackward => "no-backward",
            Self::Dps { .. } => "dps",
            Self::DpsResample { .. } => "dps-resample",
            Self::DdpmUnconditional => "ddpm-unconditional",
        }
    }
}

/// How a step moves from the clean estimate to the next noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mapping {
    /// Re-noise the estimate with the forward kernel.
    #[default]
    Resample,
    /// Ancestral posterior step from `x_t` with the estimate in place of the
    /// Tweedie estimate.
    Ancestral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Sampling steps `N`.
    pub n_steps: usize,
    /// Inner optimizer budget `K`.
    pub k_max: usize,
    pub lambda: f64,
    /// Stopping threshold on the root data term; the loop stops once
    /// `||A(f(v)) - y||^2 < delta^2`.
    pub delta: f64,
    pub gamma: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub variant: Variant,
    #[serde(default)]
    pub mapping: Mapping,
}

impl SamplerConfig {
    /// Defaults for a problem with `m` measurements at noise level `sigma_y`:
    /// `N = 20`, `K = 20`, `lambda = 0`, `gamma = 0.01`, Adam and
    /// `delta = (sigma_y + 0.001) sqrt(m)`.
    pub fn defaults(m: usize, sigma_y: f64, seed: u64) -> Self {
        Self {
            n_steps: 20,
            k_max: 20,
            lambda: 0.0,
            delta: default_delta(m, sigma_y),
            gamma: 0.01,
            optimizer: OptimizerKind::Adam,
            seed,
            variant: Variant::Sitcom,
            mapping: Mapping::Resample,
        }
    }

    /// [`SamplerConfig::defaults`] for `op`, with `lambda = 1` for phase
    /// retrieval.
    pub fn for_operator(op: &dyn ForwardOperator, sigma_y: f64, seed: u64) -> Self {
        let lambda = if op.name() == "phase-retrieval" { 1.0 } else { 0.0 };
        Self { lambda, ..Self::defaults(op.m(), sigma_y, seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        if self.k_max == 0 {
            return Err(invalid("k_max must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.delta >= 0.0) {
            return Err(invalid(format!("delta must be non-negative, got {}", self.delta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        match self.variant {
            Variant::SitcomOde { n_ode: 0 } => Err(invalid("n_ode must be at least 1")),
            _ => Ok(()),
        }
    }
}

/// `(sigma_y + 0.001) sqrt(m)`.
pub fn default_delta(m: usize, sigma_y: f64) -> f64 {
    (sigma_y + 0.001) * (m as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BreakReason {
    /// The data term dropped below `delta^2`.
    Threshold,
    /// The optimizer budget ran out.
    Budget,
    /// The variant takes one fixed update per step.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Sampler index, counting down from `N` to 1.
    pub i: usize,
    pub t: usize,
    pub t_prev: usize,
    /// Squared data term at the final inner iterate.
    pub data_term: f64,
    /// `lambda ||x_i - v||^2` at the final inner iterate.
    pub lambda_term: f64,
    /// Optimizer updates taken.
    pub iterations: usize,
    pub break_reason: BreakReason,
    /// Objective value at every inner evaluation.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub x0: Tensor,
    /// `x_N, x_{N-1}, ..., x_0`.
    pub trajectory: Vec<Tensor>,
    /// Clean estimate used by each step, in step order.
    pub estimates: Vec<Tensor>,
    pub steps: Vec<StepDiagnostics>,
    pub runtime_seconds: f64,
}

impl RunResult {
    pub fn inner_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }
}

/// Run whichever sampler `config.variant` names.
pub fn sample(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<RunResult> {
    match config.variant {
        Variant::Sitcom => sitcom_sample(problem, model, sched, config),
        Variant::SitcomOde { .. } => sitcom_ode_sample(problem, model, sched, config),
        Variant::NoBackward => no_backward_sample(problem, model, sched, config),
        Variant::Dps { .. } => dps_sample(problem, model, sched, config),
        Variant::DpsResample { .. } => dps_resample_sample(problem, model, sched, config),
        Variant::DdpmUnconditional => ddpm_unconditional_sample(problem, model, sched, config),
    }
}

/// Shared driver: validates, draws the initial state and per-step noise, and
/// calls `step(i, t, t_prev, x_i, eta)` for `i = N..1`. Each call returns the
/// next iterate, the clean estimate it was built from, and diagnostics.
pub(crate) fn drive<F>(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
    expected: &[&str],
    mut step: F,
) -> Result<RunResult>
where
    F: FnMut(usize, usize, usize, &Tensor, &Tensor) -> Result<(Tensor, Tensor, StepDiagnostics)>,
{
    config.validate()?;
    if !expected.contains(&config.variant.label()) {
        return Err(invalid(format!("sampler for {expected:?} called with variant {}", config.variant.label())));
    }
    if model.dim() != problem.operator.n() {
        return Err(invalid(format!(
            "model dimension {} does not match signal dimension {}",
            model.dim(),
            problem.operator.n()
        )));
    }
    let start = Instant::now();
    let times = sched.sampler_times(config.n_steps)?;
    let shape = problem.signal_shape().to_vec();
    let mut init = stream(config.seed, Stream::Init);
    let mut noise = stream(config.seed, Stream::Step);
    let mut x = normal_tensor(&shape, &mut init);
    let mut trajectory = Vec::with_capacity(config.n_steps + 1);
    let mut estimates = Vec::with_capacity(config.n_steps);
    let mut steps = Vec::with_capacity(config.n_steps);
    trajectory.push(x.clone());
    for i in (1..=config.n_steps).rev() {
        let eta = normal_tensor(&shape, &mut noise);
        let (next, xhat0, diag) = step(i, times[i], times[i - 1], &x, &eta)?;
        x = next;
        trajectory.push(x.clone());
        estimates.push(xhat0);
        steps.push(diag);
    }
    Ok(RunResult { x0: x, trajectory, estimates, steps, runtime_seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests;
