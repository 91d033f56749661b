use crate::diffusion::{pf_ode_denoise, posterior_step, resample, NoiseSchedule};
use crate::error::Result;
use crate::operators::ProblemInstance;
use crate::score::ScoreModel;
use crate::tensor::Tensor;

use super::{drive, inner_optimize, Mapping, RunResult, SamplerConfig, StepDiagnostics, Variant};

/// Move a clean estimate at step `t` to `t_prev` with the configured mapping.
pub(crate) fn map_down(
    mapping: Mapping,
    x_t: &Tensor,
    t: usize,
    t_prev: usize,
    xhat0: &Tensor,
    eta: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    match mapping {
        Mapping::Resample => resample(xhat0, t_prev, eta, sched),
        Mapping::Ancestral => posterior_step(x_t, t, t_prev, xhat0, eta, sched),
    }
}

fn run(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
    expected: &str,
    n_ode: Option<usize>,
) -> Result<RunResult> {
    let op = problem.operator.as_ref();
    drive(problem, model, sched, config, &[expected], |i, t, t_prev, x, eta| {
        let inner = inner_optimize(x, t, &problem.y, op, model, sched, config, i)?;
        let xhat0 = match n_ode {
            Some(n) => pf_ode_denoise(&inner.v, t, model, sched, n)?,
            None => inner.xhat0,
        };
        let next = map_down(config.mapping, x, t, t_prev, &xhat0, eta, sched)?;
        let diag = StepDiagnostics {
            i,
            t,
            t_prev,
            data_term: inner.value.data,
            lambda_term: inner.value.regularizer,
            iterations: inner.iterations,
            break_reason: inner.reason,
            objective_trace: inner.trace,
        };
        Ok((next, xhat0, diag))
    })
}

/// Per step: optimize the network input `v` from `x_i`, take `f(vhat)` as
/// the clean estimate, and re-noise it to the next step.
pub fn sitcom_sample(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<RunResult> {
    run(problem, model, sched, config, "sitcom", None)
}

/// As [`sitcom_sample`], with the clean estimate refined by integrating the
/// probability-flow ODE from `vhat`. The inner objective keeps the one-step
/// Tweedie map.
pub fn sitcom_ode_sample(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<RunResult> {
    let n_ode = match config.variant {
        Variant::SitcomOde { n_ode } => n_ode,
        _ => 0,
    };
    run(problem, model, sched, config, "sitcom-ode", Some(n_ode))
}
