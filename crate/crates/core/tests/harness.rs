mod common;

use std::fs;
use std::path::Path;

use sitcom_core::harness::{
    ablation_sweep, fingerprint, run_experiment, summarize_file, CheckSpec, ExperimentConfig, ModelSpec, ResultRow,
    SamplerSpec, SweepAxis,
};
use sitcom_core::samplers::{SamplerConfig, Variant};
use tempfile::TempDir;

use common::blob_config;

fn quick(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&common::repo_root().join("configs/gmm-quick.json")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg.problems = 3;
    cfg
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

/// Rows with the wall-clock column blanked.
fn timeless(rows: &[ResultRow]) -> Vec<ResultRow> {
    rows.iter().cloned().map(|r| ResultRow { runtime: None, ..r }).collect()
}

#[test]
fn empty_sampler_list_still_writes_headers() {
    let dir = TempDir::new().unwrap();
    let mut cfg = quick(dir.path());
    cfg.samplers.clear();
    cfg.checks.clear();
    let report = run_experiment(&cfg).unwrap();
    assert!(report.rows.is_empty() && report.summary.is_empty());
    for (file, first) in [
        ("results.csv", "fingerprint,sampler"),
        ("summary.csv", "sampler,variant"),
        ("curves.csv", "sampler,cell"),
        ("checks.csv", "check,cell"),
    ] {
        let h = header(&dir.path().join(file));
        assert!(h.starts_with(first), "{file}: {h}");
    }
}

#[test]
fn reruns_reproduce_every_row() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ra = run_experiment(&quick(a.path())).unwrap();
    let rb = run_experiment(&quick(b.path())).unwrap();
    assert_eq!(ra.rows.len(), 12);
    assert_eq!(timeless(&ra.rows), timeless(&rb.rows));
    assert_eq!(ra.curves, rb.curves);
}

#[test]
fn nk_sweep_has_one_summary_row_per_cell() {
    let dir = TempDir::new().unwrap();
    let mut cfg = quick(dir.path());
    cfg.samplers = vec![SamplerSpec::new(Variant::Sitcom)];
    cfg.sweep.n_k = Some(sitcom_core::harness::NkGrid { n: vec![4, 8], k: vec![5, 10] });
    let report = ablation_sweep(&cfg, SweepAxis::NK).unwrap();
    assert_eq!(report.rows.len(), 12);
    assert_eq!(report.summary.len(), 4);
    let mut cells: Vec<_> = report.summary.iter().map(|s| (s.n_steps, s.k_max)).collect();
    cells.sort();
    assert_eq!(cells, vec![(Some(4), Some(5)), (Some(4), Some(10)), (Some(8), Some(5)), (Some(8), Some(10))]);
    // Every cell sees the same problems with the same sampler seeds.
    for problem in 0..3 {
        let seeds: Vec<u64> = report.rows.iter().filter(|r| r.problem == problem).map(|r| r.seed).collect();
        assert!(seeds.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn single_cell_sweep_matches_a_plain_run() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let mut cfg = quick(a.path());
    // lambda = 0 is the default, so the lone cell resolves to the base config.
    cfg.sweep.lambda = Some(vec![0.0]);
    let plain = run_experiment(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    let swept = ablation_sweep(&cfg, SweepAxis::Lambda).unwrap();
    assert_eq!(plain.rows.len(), swept.rows.len());
    for (p, s) in plain.rows.iter().zip(&swept.rows) {
        assert_eq!(p.fingerprint, s.fingerprint);
        assert_eq!((p.psnr, p.mse, p.residual, p.iterations), (s.psnr, s.mse, s.residual, s.iterations));
    }
}

#[test]
fn relative_output_dirs_move_under_the_output_root() {
    let root = TempDir::new().unwrap();
    let mut cfg = quick(Path::new("nested/run"));
    cfg.samplers.truncate(1);
    // Only this test reads the variable; every other test uses absolute paths.
    std::env::set_var("SITCOM_OUTPUT_ROOT", root.path());
    let report = run_experiment(&cfg);
    std::env::remove_var("SITCOM_OUTPUT_ROOT");
    let report = report.unwrap();
    assert_eq!(report.output_dir, root.path().join("nested/run"));
    assert!(root.path().join("nested/run/results.csv").exists());
}

fn tiny_mlp(out: &Path, checkpoint: &Path, hidden: usize) -> ExperimentConfig {
    let text = format!(
        r#"{{
          "dataset": {{ "kind": "gmm-2d", "seed": 1 }},
          "model": {{ "kind": "mlp", "hidden": {hidden}, "depth": 1, "frequencies": 2,
                     "train": {{ "iters": 40, "samples": 256, "seed": 3 }},
                     "checkpoint": {checkpoint:?} }},
          "operator": {{ "kind": "identity" }},
          "noise": {{ "model": "gaussian", "sigma_y": 0.1 }},
          "samplers": [{{ "variant": {{ "kind": "sitcom" }}, "n_steps": 4, "k_max": 2 }}],
          "problems": 2,
          "seed": 9,
          "output_dir": {out:?}
        }}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

#[test]
fn checkpoints_are_reused_and_mismatches_rejected() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("ckpt/tiny.ckpt");
    let first = run_experiment(&tiny_mlp(&dir.path().join("a"), &ckpt, 8)).unwrap();
    assert!(ckpt.exists());
    assert!(dir.path().join("a/training.csv").exists());
    let second = run_experiment(&tiny_mlp(&dir.path().join("b"), &ckpt, 8)).unwrap();
    assert!(!dir.path().join("b/training.csv").exists(), "the checkpoint should have been loaded");
    assert_eq!(timeless(&first.rows), timeless(&second.rows));
    let err = run_experiment(&tiny_mlp(&dir.path().join("c"), &ckpt, 16)).unwrap_err();
    assert!(err.to_string().contains("config asks for"), "{err}");
}

#[test]
fn fingerprints_follow_resolved_fields_only() {
    let cfg = quick(Path::new("/somewhere"));
    let sc = SamplerConfig::defaults(1, 0.05, 4);
    let base = fingerprint(&cfg, 0, &sc);
    assert_eq!(base.len(), 64);

    let mut moved = cfg.clone();
    moved.output_dir = "/elsewhere".into();
    moved.max_runs = 1;
    moved.checks = vec![CheckSpec::NoFailures, CheckSpec::NoFailures];
    assert_eq!(fingerprint(&moved, 0, &sc), base);

    assert_ne!(fingerprint(&cfg, 1, &sc), base);
    assert_ne!(fingerprint(&cfg, 0, &SamplerConfig { k_max: 21, ..sc.clone() }), base);
    assert_ne!(fingerprint(&cfg, 0, &SamplerConfig { seed: 5, ..sc.clone() }), base);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(fingerprint(&other, 0, &sc), base);
    let mut other = cfg.clone();
    other.dataset.seed += 1;
    assert_ne!(fingerprint(&other, 0, &sc), base);
}

#[test]
fn run_cap_is_enforced_before_any_work() {
    let dir = TempDir::new().unwrap();
    let mut cfg = quick(&dir.path().join("capped"));
    cfg.max_runs = 11;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.to_string().contains("max_runs"), "{err}");
    assert!(!dir.path().join("capped").exists());
    cfg.max_runs = 12;
    run_experiment(&cfg).unwrap();
}

#[test]
fn diverging_runs_are_recorded_not_raised() {
    let dir = TempDir::new().unwrap();
    let mut cfg = quick(dir.path());
    let mut wild = SamplerSpec::new(Variant::Sitcom);
    wild.name = Some("wild".into());
    wild.gamma = Some(1e300);
    cfg.samplers = vec![SamplerSpec::new(Variant::Sitcom), wild];
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failures(), 3);
    for r in report.rows.iter().filter(|r| r.sampler == "wild") {
        assert!(r.error.contains("non-finite"), "{}", r.error);
        assert_eq!((r.psnr, r.residual), (None, None));
    }
    let s = report.summary.iter().find(|s| s.sampler == "wild").unwrap();
    assert_eq!((s.runs, s.failures, s.psnr_mean), (3, 3, None));
    let outcome = &report.checks[0];
    assert!(!outcome.passed, "{}", outcome.detail);
    assert_eq!(report.failed_checks().len(), 1);
}

#[test]
fn summary_can_be_rebuilt_from_results_csv() {
    let dir = TempDir::new().unwrap();
    let report = run_experiment(&quick(dir.path())).unwrap();
    let rebuilt = summarize_file(&dir.path().join("results.csv")).unwrap();
    assert_eq!(rebuilt.len(), report.summary.len());
    for (a, b) in rebuilt.iter().zip(&report.summary) {
        assert_eq!((&a.sampler, &a.cell, a.runs, a.failures), (&b.sampler, &b.cell, b.runs, b.failures));
        for (x, y) in [(a.psnr_mean, b.psnr_mean), (a.residual_mean, b.residual_mean), (a.ssim_mean, b.ssim_mean)] {
            match (x, y) {
                (Some(x), Some(y)) => {
                    assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0), "{x} vs {y}")
                }
                other => assert_eq!(other.0, other.1),
            }
        }
    }
}

#[test]
fn image_experiments_write_pgm_files() {
    let dir = TempDir::new().unwrap();
    let mut cfg = blob_config(dir.path());
    cfg.problems = 2;
    cfg.samplers.truncate(1);
    cfg.checks.retain(|c| matches!(c, CheckSpec::NoFailures));
    assert!(matches!(cfg.model, ModelSpec::Mlp { .. }));
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failures(), 0);
    let images = dir.path().join("images");
    for p in 0..2 {
        let truth = fs::read(images.join(format!("truth_p{p}.pgm"))).unwrap();
        assert!(truth.starts_with(b"P5\n8 8\n255\n"), "{:?}", &truth[..12]);
        assert_eq!(truth.len(), 11 + 64);
    }
    let count = fs::read_dir(&images).unwrap().count();
    assert_eq!(count, 4);
}
