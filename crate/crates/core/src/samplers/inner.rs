use crate::autodiff::{Graph, Var};
use crate::diffusion::{tweedie_graph, NoiseSchedule};
use crate::error::{Error, Result};
use crate::operators::ForwardOperator;
use crate::optim::Optimizer;
use crate::score::ScoreModel;
use crate::tensor::Tensor;

use super::{BreakReason, SamplerConfig};

/// Both terms of the inner objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    /// `||A(f(v)) - y||^2`.
    pub data: f64,
    /// `lambda ||x_i - v||^2`.
    pub regularizer: f64,
}

impl ObjectiveValue {
    pub fn total(&self) -> f64 {
        self.data + self.regularizer
    }
}

struct Recorded {
    value: ObjectiveValue,
    objective: Var,
    xhat0: Var,
}

#[allow(clippy::too_many_arguments)]
fn record(
    g: &mut Graph,
    v: Var,
    x_i: &Tensor,
    t: usize,
    y: &Tensor,
    operator: &dyn ForwardOperator,
    model: &dyn ScoreModel,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<Recorded> {
    let xhat0 = tweedie_graph(g, v, t, model, sched)?;
    let ax = operator.apply_graph(g, xhat0)?;
    let yc = g.constant(y.clone());
    let r = g.sub(ax, yc)?;
    let data = g.sq_norm(r)?;
    let data_value = g.value(data).item();
    let (objective, reg_value) = if lambda > 0.0 {
        let xc = g.constant(x_i.clone());
        let d = g.sub(xc, v)?;
        let sq = g.sq_norm(d)?;
        let reg = g.scale(sq, lambda)?;
        let reg_value = g.value(reg).item();
        (g.add(data, reg)?, reg_value)
    } else {
        (data, 0.0)
    };
    Ok(Recorded { value: ObjectiveValue { data: data_value, regularizer: reg_value }, objective, xhat0 })
}

/// Record the inner objective at `v` on `g` and return its scalar node.
#[allow(clippy::too_many_arguments)]
pub fn objective_graph(
    g: &mut Graph,
    v: Var,
    x_i: &Tensor,
    t: usize,
    y: &Tensor,
    operator: &dyn ForwardOperator,
    model: &dyn ScoreModel,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<Var> {
    Ok(record(g, v, x_i, t, y, operator, model, lambda, sched)?.objective)
}

/// `||A(f(v; t)) - y||^2 + lambda ||x_i - v||^2` and its gradient in `v`.
#[allow(clippy::too_many_arguments)]
pub fn sitcom_objective(
    v: &Tensor,
    x_i: &Tensor,
    t: usize,
    y: &Tensor,
    operator: &dyn ForwardOperator,
    model: &dyn ScoreModel,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<(ObjectiveValue, Tensor)> {
    let mut g = Graph::new();
    let vv = g.param(v.clone());
    let rec = record(&mut g, vv, x_i, t, y, operator, model, lambda, sched)?;
    let grad = g.gradient(rec.objective, vv)?;
    Ok((rec.value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    /// Final iterate `vhat`.
    pub v: Tensor,
    /// `f(vhat)`, computed by the last evaluation.
    pub xhat0: Tensor,
    /// Optimizer updates taken.
    pub iterations: usize,
    pub value: ObjectiveValue,
    pub reason: BreakReason,
    /// Objective value at every evaluation, starting at `v = x_i`.
    pub trace: Vec<f64>,
}

/// Minimize the inner objective from `v = x_i`.
///
/// Each round evaluates the objective at the current `v`; the loop stops as
/// soon as the data term alone is below `delta^2`, or after `K` updates.
/// Reaching `K` is reported as [`BreakReason::Budget`] even when the final
/// data term also meets the threshold.
/// `step` is the sampler index reported in errors.
#[allow(clippy::too_many_arguments)]
pub fn inner_optimize(
    x_i: &Tensor,
    t: usize,
    y: &Tensor,
    operator: &dyn ForwardOperator,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
    step: usize,
) -> Result<InnerResult> {
    config.validate()?;
    let threshold = config.delta * config.delta;
    let mut v = x_i.clone();
    let mut opt = Optimizer::new(config.optimizer, v.shape());
    let mut trace = Vec::with_capacity(config.k_max + 1);
    for k in 0..=config.k_max {
        let mut g = Graph::new();
        let vv = g.param(v.clone());
        let rec = record(&mut g, vv, x_i, t, y, operator, model, config.lambda, sched).map_err(|e| match e {
            Error::NonFinite { .. } => Error::InnerDiverged { step, iteration: k },
            other => other,
        })?;
        let total = rec.value.total();
        if !total.is_finite() {
            return Err(Error::InnerDiverged { step, iteration: k });
        }
        trace.push(total);
        let stop = if k == config.k_max {
            Some(BreakReason::Budget)
        } else if rec.value.data < threshold {
            Some(BreakReason::Threshold)
        } else {
            None
        };
        if let Some(reason) = stop {
            return Ok(InnerResult {
                xhat0: g.value(rec.xhat0).clone(),
                v,
                iterations: k,
                value: rec.value,
                reason,
                trace,
            });
        }
        let grad = g.gradient(rec.objective, vv)?;
        opt.update(&mut v, &grad, config.gamma)?;
        if !v.all_finite() {
            return Err(Error::InnerDiverged { step, iteration: k });
        }
    }
    unreachable!("the loop returns at k = K")
}
