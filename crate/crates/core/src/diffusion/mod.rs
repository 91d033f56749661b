//! Forward diffusion, Tweedie denoising and reverse-time steps.

mod schedule;
mod train;

use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::score::ScoreModel;
use crate::tensor::Tensor;

pub use schedule::NoiseSchedule;
pub use train::{dsm_loss, train_score_model, TrainBatch, TrainConfig, TrainReport};

fn check_time(t: usize, sched: &NoiseSchedule) -> Result<()> {
    if t > sched.t_max() {
        return Err(invalid(format!("time {t} outside 0..={}", sched.t_max())));
    }
    Ok(())
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eta`.
pub fn forward_diffuse(x0: &Tensor, t: usize, eta: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    check_time(t, sched)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eta, |x, e| a * x + b * e)
}

/// Tweedie estimate `(x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)` from a
/// given noise prediction.
pub fn tweedie_from_eps(x_t: &Tensor, eps: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    check_time(t, sched)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps, |x, e| (x - b * e) * a)
}

/// The Tweedie-network denoiser `f(x_t; t)`. At `t = 0` it is the identity.
pub fn tweedie_denoise(x_t: &Tensor, t: usize, model: &dyn ScoreModel, sched: &NoiseSchedule) -> Result<Tensor> {
    check_time(t, sched)?;
    if t == 0 {
        return Ok(x_t.clone());
    }
    tweedie_from_eps(x_t, &model.eps(x_t, t)?, t, sched)
}

/// [`tweedie_denoise`] recorded on a tape.
pub fn tweedie_graph(g: &mut Graph, x_t: Var, t: usize, model: &dyn ScoreModel, sched: &NoiseSchedule) -> Result<Var> {
    check_time(t, sched)?;
    if t == 0 {
        return Ok(x_t);
    }
    let ab = sched.alpha_bar(t);
    let eps = model.eps_graph(g, x_t, t)?;
    let a = g.scale(x_t, 1.0 / ab.sqrt())?;
    let b = g.scale(eps, (1.0 - ab).sqrt() / ab.sqrt())?;
    g.sub(a, b)
}

/// One ancestral step from `t` to `t - 1` written in terms of a clean
/// estimate:
///
/// `x_{t-1} = c_x x_t + c_0 xhat0 + sqrt(beta_t) eta` with
/// `c_x = sqrt(alpha_t)(1 - abar_{t-1}) / (1 - abar_t)` and
/// `c_0 = sqrt(abar_{t-1}) beta_t / (1 - abar_t)`.
pub fn ddpm_reverse_step(
    x_t: &Tensor,
    t: usize,
    xhat0: &Tensor,
    eta: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t == 0 {
        return Err(invalid("no reverse step below t = 0"));
    }
    check_time(t, sched)?;
    let (ab, ab_prev, beta) = (sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.beta(t));
    let cx = sched.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab);
    let cn = beta.sqrt();
    let mut out = x_t.zip_map(xhat0, |x, h| cx * x + c0 * h)?;
    out.axpy(cn, eta)?;
    Ok(out)
}

/// Ancestral step from `t` down to any `s < t`, the strided form of
/// [`ddpm_reverse_step`]. With `a = abar_t / abar_s`:
///
/// `x_s = sqrt(a)(1 - abar_s)/(1 - abar_t) x_t
///       + sqrt(abar_s)(1 - a)/(1 - abar_t) xhat0 + sqrt(1 - a) eta`,
///
/// which is [`ddpm_reverse_step`] when `s = t - 1`. The noise term is dropped
/// when `s = 0` so that the final sample is the clean estimate.
pub fn posterior_step(
    x_t: &Tensor,
    t: usize,
    s: usize,
    xhat0: &Tensor,
    eta: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if s >= t {
        return Err(invalid(format!("posterior step needs s < t, got s={s}, t={t}")));
    }
    check_time(t, sched)?;
    let (ab, ab_s) = (sched.alpha_bar(t), sched.alpha_bar(s));
    let a = ab / ab_s;
    let cx = a.sqrt() * (1.0 - ab_s) / (1.0 - ab);
    let c0 = ab_s.sqrt() * (1.0 - a) / (1.0 - ab);
    let cn = if s == 0 { 0.0 } else { (1.0 - a).sqrt() };
    let mut out = x_t.zip_map(xhat0, |x, h| cx * x + c0 * h)?;
    if cn != 0.0 {
        out.axpy(cn, eta)?;
    }
    Ok(out)
}

/// Score-form step `x_{t-1} = (x_t + beta_t score) / sqrt(1 - beta_t) +
/// sqrt(beta_t) eta`.
pub fn score_reverse_step(
    x_t: &Tensor,
    t: usize,
    score: &Tensor,
    eta: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t == 0 {
        return Err(invalid("no reverse step below t = 0"));
    }
    check_time(t, sched)?;
    let beta = sched.beta(t);
    let a = 1.0 / (1.0 - beta).sqrt();
    let mut out = x_t.zip_map(score, |x, s| a * (x + beta * s))?;
    out.axpy(beta.sqrt(), eta)?;
    Ok(out)
}

/// Re-noise a clean estimate to time `t_prev`: `sqrt(abar) xhat0 +
/// sqrt(1 - abar) eta`. Exact identity at `t_prev = 0`.
pub fn resample(xhat0: &Tensor, t_prev: usize, eta: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    check_time(t_prev, sched)?;
    if t_prev == 0 {
        if xhat0.shape() != eta.shape() {
            return Err(crate::error::Error::ShapeMismatch {
                op: "resample",
                left: xhat0.shape().to_vec(),
                right: eta.shape().to_vec(),
            });
        }
        return Ok(xhat0.clone());
    }
    forward_diffuse(xhat0, t_prev, eta, sched)
}

/// Decreasing schedule indices visited by the probability-flow Euler solver
/// started at `t`: `n_ode` Karras-spaced (`rho = 7`) noise levels between
/// `sigma(t)` and `sigma(1)`, snapped to schedule indices, followed by 0.
pub fn pf_ode_grid(t: usize, n_ode: usize, sched: &NoiseSchedule) -> Result<Vec<usize>> {
    check_time(t, sched)?;
    if n_ode == 0 {
        return Err(invalid("n_ode must be at least 1"));
    }
    if t == 0 {
        return Ok(vec![0]);
    }
    const RHO: f64 = 7.0;
    let (hi, lo) = (sched.sigma(t).powf(1.0 / RHO), sched.sigma(1).powf(1.0 / RHO));
    let mut idx = vec![t];
    for i in 1..n_ode {
        let frac = i as f64 / (n_ode - 1) as f64;
        let sigma = (hi + frac * (lo - hi)).powf(RHO);
        let k = sched.nearest_index(sigma).clamp(1, t);
        if *idx.last().expect("non-empty") != k {
            idx.push(k);
        }
    }
    idx.push(0);
    Ok(idx)
}

/// Clean estimate by Euler integration of the probability-flow ODE from `t`
/// to 0.
///
/// In the scaled variable `u = x / sqrt(abar)` with noise level
/// `sigma = sqrt((1 - abar) / abar)` the ODE reads `du/dsigma = eps(sqrt(abar)
/// u, t(sigma))`. One step (`n_ode = 1`) is exactly the Tweedie estimate.
pub fn pf_ode_denoise(
    v_t: &Tensor,
    t: usize,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    n_ode: usize,
) -> Result<Tensor> {
    let grid = pf_ode_grid(t, n_ode, sched)?;
    if t == 0 {
        return Ok(v_t.clone());
    }
    let mut u = v_t.scale(1.0 / sched.alpha_bar(t).sqrt());
    for w in grid.windows(2) {
        let (k, next) = (w[0], w[1]);
        let x = u.scale(sched.alpha_bar(k).sqrt());
        let eps = model.eps(&x, k)?;
        u.axpy(sched.sigma(next) - sched.sigma(k), &eps)?;
    }
    Ok(u)
}
