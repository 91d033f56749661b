use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{train_score_model, NoiseSchedule, TrainReport};
use crate::error::{Error, Result};
use crate::metrics::{psnr, report, DEFAULT_PEAK};
use crate::operators::{synthesize_measurements, ProblemInstance};
use crate::samplers::{best_of_k, sample, RunResult};
use crate::score::{load_checkpoint, save_checkpoint, AnalyticGmm, Mlp, MlpConfig, ScoreModel};
use crate::tensor::Tensor;

use super::checks::{evaluate_checks, CheckOutcome};
use super::config::{fingerprint, Cell, ExperimentConfig, ModelSpec, SamplerSpec, SweepAxis};
use super::dataset::{generate_dataset, DatasetSpec};
use super::output::{summarize, write_csv, write_pgm, CurveRow, ResultRow, SummaryRow};

/// Offset between the training stream and the test-signal stream.
const TEST_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// The score model an experiment uses, plus its training curve if it was
/// trained in this call.
pub struct BuiltModel {
    pub model: Arc<dyn ScoreModel>,
    pub training: Option<TrainReport>,
}

/// Train, load or construct the configured score model.
pub fn build_model(cfg: &ExperimentConfig, sched: &NoiseSchedule) -> Result<BuiltModel> {
    match &cfg.model {
        ModelSpec::AnalyticGmm => {
            Ok(BuiltModel { model: Arc::new(AnalyticGmm::new(cfg.dataset.prior()?, sched.clone())), training: None })
        }
        ModelSpec::Mlp { train, checkpoint, .. } => {
            let mcfg = mlp_config(cfg, sched)?;
            if let Some(path) = checkpoint.as_deref().filter(|p| p.exists()) {
                let mlp = load_checkpoint(path)?;
                if *mlp.config() != mcfg {
                    return Err(Error::Checkpoint(format!(
                        "{} holds {:?}, config asks for {:?}",
                        path.display(),
                        mlp.config(),
                        mcfg
                    )));
                }
                return Ok(BuiltModel { model: Arc::new(mlp), training: None });
            }
            let (mlp, report) = train_mlp(&cfg.dataset, mcfg, train, sched)?;
            if let Some(path) = checkpoint {
                write_model(&mlp, path)?;
            }
            Ok(BuiltModel { model: Arc::new(mlp), training: Some(report) })
        }
    }
}

/// Architecture of the configured MLP.
pub fn mlp_config(cfg: &ExperimentConfig, sched: &NoiseSchedule) -> Result<MlpConfig> {
    match &cfg.model {
        ModelSpec::Mlp { hidden, depth, frequencies, .. } => Ok(MlpConfig {
            dim: cfg.dataset.kind.signal_shape().iter().product(),
            hidden: *hidden,
            depth: *depth,
            frequencies: *frequencies,
            t_max: sched.t_max(),
        }),
        ModelSpec::AnalyticGmm => Err(Error::Config("the analytic-gmm model has nothing to train".into())),
    }
}

/// Train the configured MLP from scratch and write it to `out`, ignoring any
/// existing checkpoint.
pub fn train_to(cfg: &ExperimentConfig, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let sched = cfg.schedule.build()?;
    let mcfg = mlp_config(cfg, &sched)?;
    let ModelSpec::Mlp { train, .. } = &cfg.model else { unreachable!("mlp_config rejects other models") };
    let (mlp, report) = train_mlp(&cfg.dataset, mcfg, train, &sched)?;
    write_model(&mlp, out)?;
    Ok(report)
}

fn write_model(mlp: &Mlp, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(mlp, path)
}

/// Fit an MLP to `train.samples` draws of the dataset.
pub fn train_mlp(
    dataset: &DatasetSpec,
    config: MlpConfig,
    train: &super::config::TrainSpec,
    sched: &NoiseSchedule,
) -> Result<(Mlp, TrainReport)> {
    let data = generate_dataset(dataset, train.samples, dataset.seed)?;
    let mut mlp = Mlp::new(config, train.seed)?;
    let report = train_score_model(&mut mlp, &data.samples, sched, &train.train_config())?;
    Ok((mlp, report))
}

/// Ground-truth signals and measurements of every test problem.
pub fn build_problems(cfg: &ExperimentConfig) -> Result<Vec<ProblemInstance>> {
    let shape = cfg.dataset.kind.signal_shape();
    let op = cfg.operator.build(&shape)?;
    let truth = generate_dataset(&cfg.dataset, cfg.problems, cfg.seed.wrapping_add(TEST_SALT))?;
    (0..cfg.problems)
        .map(|p| {
            let sigma = cfg.noise.sigma_y();
            synthesize_measurements(&truth.signal(p), op.clone(), sigma, cfg.noise.model(), cfg.problem_seed(p))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub curves: Vec<CurveRow>,
    pub checks: Vec<CheckOutcome>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.error.is_empty()).count()
    }

    pub fn failed_checks(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

struct Job<'a> {
    sampler: &'a SamplerSpec,
    cell: &'a Cell,
    problem: usize,
    repetition: usize,
}

struct JobOutput {
    row: ResultRow,
    curve: Vec<CurveRow>,
    x0: Option<Tensor>,
}

/// Run every sampler on every problem and write `results.csv`,
/// `summary.csv`, `curves.csv` and images to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    execute(cfg, None)
}

/// As [`run_experiment`] over the grid of one sweep axis. Every cell uses the
/// same problems and sampler seeds.
pub fn ablation_sweep(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<ExperimentReport> {
    execute(cfg, Some(axis))
}

fn execute(cfg: &ExperimentConfig, axis: Option<SweepAxis>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells = cfg.cells(axis)?;
    let total = cfg.run_count(cells.len());
    if total > cfg.max_runs {
        return Err(Error::Config(format!(
            "{total} runs exceed max_runs = {}; shrink the grid or raise the cap",
            cfg.max_runs
        )));
    }
    let out = cfg.resolved_output_dir();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;

    let sched = cfg.schedule.build()?;
    let problems = build_problems(cfg)?;
    // No runs means no reason to train.
    let model = if total == 0 {
        None
    } else {
        let built = build_model(cfg, &sched)?;
        if let Some(tr) = &built.training {
            let rows: Vec<_> = tr.losses.iter().enumerate().map(|(i, l)| LossRow { iteration: i, loss: *l }).collect();
            write_csv(&out.join("training.csv"), &rows, LossRow::HEADER)?;
        }
        Some(built.model)
    };

    let mut jobs = Vec::new();
    for sampler in &cfg.samplers {
        for cell in &cells {
            for problem in 0..cfg.problems {
                for repetition in 0..cfg.repetitions {
                    jobs.push(Job { sampler, cell, problem, repetition });
                }
            }
        }
    }
    let outputs: Vec<JobOutput> = match &model {
        None => Vec::new(),
        Some(model) => {
            jobs.par_iter().map(|job| run_job(cfg, job, &problems[job.problem], model.as_ref(), &sched)).collect()
        }
    };

    let mut rows = Vec::with_capacity(outputs.len());
    let mut curves = Vec::new();
    let images = cfg.images && cfg.dataset.kind.signal_shape().len() == 2;
    if images && total > 0 {
        let dir = out.join("images");
        fs::create_dir_all(&dir)?;
        for (p, prob) in problems.iter().enumerate() {
            if let Some(x) = &prob.x_true {
                write_pgm(&dir.join(format!("truth_p{p}.pgm")), x)?;
            }
        }
    }
    for (job, o) in jobs.iter().zip(outputs) {
        if images {
            if let Some(x0) = &o.x0 {
                let name = format!(
                    "{}_{}_p{}_r{}.pgm",
                    sanitize(&job.sampler.label()),
                    sanitize(&job.cell.label()),
                    job.problem,
                    job.repetition
                );
                write_pgm(&out.join("images").join(name), x0)?;
            }
        }
        rows.push(o.row);
        curves.extend(o.curve);
    }
    let summary = summarize(&rows);
    write_csv(&out.join("results.csv"), &rows, ResultRow::HEADER)?;
    write_csv(&out.join("summary.csv"), &summary, SummaryRow::HEADER)?;
    write_csv(&out.join("curves.csv"), &curves, CurveRow::HEADER)?;
    let checks = evaluate_checks(&cfg.checks, &summary);
    write_csv(&out.join("checks.csv"), &checks, CheckOutcome::HEADER)?;
    Ok(ExperimentReport { output_dir: out, rows, summary, curves, checks })
}

#[derive(Serialize, Deserialize)]
struct LossRow {
    iteration: usize,
    loss: f64,
}

impl LossRow {
    const HEADER: &'static [&'static str] = &["iteration", "loss"];
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

fn run_job(
    cfg: &ExperimentConfig,
    job: &Job<'_>,
    problem: &ProblemInstance,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
) -> JobOutput {
    let label = job.sampler.label();
    let seed = cfg.run_seed(job.problem, job.repetition);
    let mut row = ResultRow {
        fingerprint: String::new(),
        sampler: label.clone(),
        variant: job.sampler.variant.label().to_string(),
        cell: job.cell.label(),
        problem: job.problem,
        repetition: job.repetition,
        n_steps: None,
        k_max: None,
        lambda: None,
        delta: None,
        seed,
        psnr: None,
        ssim: None,
        mse: None,
        residual: None,
        runtime: None,
        iterations: None,
        error: String::new(),
    };
    let result = (|| -> Result<(RunResult, f64)> {
        let sc = job.sampler.resolve(job.cell, problem.operator.as_ref(), problem.sigma_y, seed)?;
        row.fingerprint = fingerprint(cfg, job.problem, &sc);
        row.n_steps = Some(sc.n_steps);
        row.k_max = Some(sc.k_max);
        row.lambda = Some(sc.lambda);
        row.delta = Some(sc.delta);
        match cfg.best_of {
            None => {
                let run = sample(problem, model, sched, &sc)?;
                let rt = run.runtime_seconds;
                Ok((run, rt))
            }
            Some(b) => {
                let all = best_of_k(problem, model, sched, &sc, b.k, b.selector)?;
                let rt = all.runs.iter().map(|r| r.runtime_seconds).sum();
                Ok((all.runs.into_iter().nth(all.best).expect("best index is valid"), rt))
            }
        }
    })();
    let mut curve = Vec::new();
    let x0 = match result.and_then(|(run, rt)| report(problem, &run.x0, rt).map(|m| (run, m))) {
        Ok((run, m)) => {
            if problem.x_true.is_some() {
                row.psnr = Some(m.psnr);
                row.mse = Some(m.mse);
            }
            row.ssim = m.ssim;
            row.residual = Some(m.residual_norm);
            row.runtime = Some(m.runtime_seconds);
            row.iterations = Some(run.inner_iterations());
            if let Some(truth) = &problem.x_true {
                for (est, st) in run.estimates.iter().zip(&run.steps) {
                    curve.push(CurveRow {
                        sampler: label.clone(),
                        cell: row.cell.clone(),
                        problem: job.problem,
                        repetition: job.repetition,
                        step: st.i,
                        t: st.t,
                        psnr: psnr(est, truth, DEFAULT_PEAK).unwrap_or(f64::NAN),
                        data_term: st.data_term,
                        iterations: st.iterations,
                    });
                }
            }
            Some(run.x0)
        }
        Err(e) => {
            row.error = e.to_string();
            None
        }
    };
    JobOutput { row, curve, x0 }
}

/// Recompute the summary table from a `results.csv` file.
pub fn summarize_file(path: &Path) -> Result<Vec<SummaryRow>> {
    Ok(summarize(&super::output::read_results(path)?))
}
