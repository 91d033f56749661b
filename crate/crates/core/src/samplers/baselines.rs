use crate::autodiff::Graph;
use crate::diffusion::{posterior_step, resample, tweedie_denoise, tweedie_graph, NoiseSchedule};
use crate::error::{Error, Result};
use crate::operators::ProblemInstance;
use crate::optim::Optimizer;
use crate::score::ScoreModel;
use crate::tensor::Tensor;

use super::sitcom::map_down;
use super::{drive, BreakReason, RunResult, SamplerConfig, StepDiagnostics, Variant, ZetaSchedule};

fn fixed_diag(i: usize, t: usize, t_prev: usize, data: f64) -> StepDiagnostics {
    StepDiagnostics {
        i,
        t,
        t_prev,
        data_term: data,
        lambda_term: 0.0,
        iterations: 1,
        break_reason: BreakReason::Fixed,
        objective_trace: vec![data],
    }
}

/// Per step: start from the Tweedie estimate and optimize `||A(x') - y||^2`
/// directly in signal space (no network in the loop), then re-noise.
pub fn no_backward_sample(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<RunResult> {
    let op = problem.operator.as_ref();
    let threshold = config.delta * config.delta;
    drive(problem, model, sched, config, &["no-backward"], |i, t, t_prev, x, eta| {
        let mut xp = tweedie_denoise(x, t, model, sched)?;
        let mut opt = Optimizer::new(config.optimizer, xp.shape());
        let mut trace = Vec::with_capacity(config.k_max + 1);
        let mut k = 0;
        let (data, reason) = loop {
            let mut g = Graph::new();
            let v = g.param(xp.clone());
            let ax = op.apply_graph(&mut g, v)?;
            let yc = g.constant(problem.y.clone());
            let r = g.sub(ax, yc)?;
            let obj = g.sq_norm(r).map_err(|_| Error::InnerDiverged { step: i, iteration: k })?;
            let data = g.value(obj).item();
            trace.push(data);
            if k == config.k_max {
                break (data, BreakReason::Budget);
            }
            if data < threshold {
                break (data, BreakReason::Threshold);
            }
            let grad = g.gradient(obj, v)?;
            opt.update(&mut xp, &grad, config.gamma)?;
            k += 1;
        };
        let next = map_down(config.mapping, x, t, t_prev, &xp, eta, sched)?;
        let diag = StepDiagnostics {
            i,
            t,
            t_prev,
            data_term: data,
            lambda_term: 0.0,
            iterations: k,
            break_reason: reason,
            objective_trace: trace,
        };
        Ok((next, xp, diag))
    })
}

/// Tweedie estimate at `x_i`, the squared residual, and its gradient with
/// respect to `x_i`.
fn guided(
    x: &Tensor,
    t: usize,
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
) -> Result<(Tensor, f64, Tensor)> {
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let xhat = tweedie_graph(&mut g, v, t, model, sched)?;
    let ax = problem.operator.apply_graph(&mut g, xhat)?;
    let yc = g.constant(problem.y.clone());
    let r = g.sub(ax, yc)?;
    let obj = g.sq_norm(r)?;
    let grad = g.gradient(obj, v)?;
    Ok((g.value(xhat).clone(), g.value(obj).item(), grad))
}

fn zeta_of(config: &SamplerConfig) -> ZetaSchedule {
    match config.variant {
        Variant::Dps { zeta } | Variant::DpsResample { zeta } => zeta,
        _ => ZetaSchedule::Constant { zeta: 0.0 },
    }
}

/// Ancestral step from `x_i` followed by one gradient step of the measurement
/// residual through the Tweedie estimate.
pub fn dps_sample(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<RunResult> {
    let zeta = zeta_of(config);
    drive(problem, model, sched, config, &["dps"], |i, t, t_prev, x, eta| {
        let (xhat, data, grad) = guided(x, t, problem, model, sched)?;
        let mut next = posterior_step(x, t, t_prev, &xhat, eta, sched)?;
        next.axpy(-zeta.at(data.sqrt()), &grad)?;
        Ok((next, xhat, fixed_diag(i, t, t_prev, data)))
    })
}

/// One gradient step on `x_i`, then the Tweedie estimate of the moved point
/// re-noised to the next step.
pub fn dps_resample_sample(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<RunResult> {
    let zeta = zeta_of(config);
    drive(problem, model, sched, config, &["dps-resample"], |i, t, t_prev, x, eta| {
        let (_, data, grad) = guided(x, t, problem, model, sched)?;
        let mut v = x.clone();
        v.axpy(-zeta.at(data.sqrt()), &grad)?;
        let xhat_v = tweedie_denoise(&v, t, model, sched)?;
        let next = resample(&xhat_v, t_prev, eta, sched)?;
        Ok((next, xhat_v, fixed_diag(i, t, t_prev, data)))
    })
}

/// Ancestral sampling that ignores the measurements.
pub fn ddpm_unconditional_sample(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<RunResult> {
    drive(problem, model, sched, config, &["ddpm-unconditional"], |i, t, t_prev, x, eta| {
        let xhat = tweedie_denoise(x, t, model, sched)?;
        let next = posterior_step(x, t, t_prev, &xhat, eta, sched)?;
        let data = problem.operator.apply(&xhat)?.sub(&problem.y)?.norm_sq();
        Ok((next, xhat, fixed_diag(i, t, t_prev, data)))
    })
}
