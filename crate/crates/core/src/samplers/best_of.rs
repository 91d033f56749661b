use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Result};
use crate::metrics::{psnr, residual_norm, DEFAULT_PEAK};
use crate::operators::ProblemInstance;
use crate::score::ScoreModel;

use super::{sample, RunResult, SamplerConfig};

/// Criterion for picking among independent runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    /// Smallest `||A(x0) - y||`; needs no ground truth.
    #[default]
    Residual,
    /// Highest PSNR against `x_true`.
    Psnr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestOfK {
    /// Index into `runs` of the selected run.
    pub best: usize,
    /// Every run, in seed order `seed, seed + 1, ...`.
    pub runs: Vec<RunResult>,
    /// Selector score of each run (lower is better).
    pub scores: Vec<f64>,
}

impl BestOfK {
    pub fn best_run(&self) -> &RunResult {
        &self.runs[self.best]
    }
}

/// Run `k` independent reconstructions with seeds `config.seed + j` and keep
/// the one minimizing `selector`. Ties go to the lowest seed.
pub fn best_of_k(
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    config: &SamplerConfig,
    k: usize,
    selector: Selector,
) -> Result<BestOfK> {
    if k == 0 {
        return Err(invalid("best-of-k needs k >= 1"));
    }
    if selector == Selector::Psnr && problem.x_true.is_none() {
        return Err(invalid("psnr selection needs a ground-truth signal"));
    }
    let mut runs = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    for j in 0..k as u64 {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(j);
        let run = sample(problem, model, sched, &cfg)?;
        let score = match selector {
            Selector::Residual => residual_norm(problem, &run.x0)?,
            Selector::Psnr => -psnr(&run.x0, problem.x_true.as_ref().expect("checked above"), DEFAULT_PEAK)?,
        };
        scores.push(score);
        runs.push(run);
    }
    let best = scores.iter().enumerate().fold(0, |b, (j, &s)| if s < scores[b] { j } else { b });
    Ok(BestOfK { best, runs, scores })
}
