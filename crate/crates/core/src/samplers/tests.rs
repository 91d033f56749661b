use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffusion::{resample, tweedie_denoise};
use crate::error::Error;
use crate::operators::{gaussian_kernel, synthesize_measurements, Blur, ForwardOperator, Mask, NoiseModel, Scaled};
use crate::rng::normal_tensor;
use crate::score::{AnalyticGmm, GmmPrior, ZeroEps};

fn gaussian_model(n: usize, seed: u64) -> AnalyticGmm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = normal_tensor(&[n], &mut rng).scale(0.3);
    let a = DMatrix::from_vec(n, n, normal_tensor(&[n * n], &mut rng).into_data());
    let c = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.05;
    let cov = Tensor::new(vec![n, n], c.as_slice().to_vec()).unwrap();
    AnalyticGmm::new(GmmPrior::gaussian(mu, cov).unwrap(), NoiseSchedule::ddpm_default())
}

fn problem(op: Arc<dyn ForwardOperator>, model: &AnalyticGmm, sigma: f64, seed: u64) -> ProblemInstance {
    let mut rng = stream(seed, crate::rng::Stream::Dataset);
    let x = model.prior().sample(1, &mut rng).unwrap();
    let x = x.reshape(op.input_shape()).unwrap();
    synthesize_measurements(&x, op, sigma, NoiseModel::Gaussian, seed).unwrap()
}

fn mask16() -> Arc<dyn ForwardOperator> {
    Arc::new(Mask::random_count(&[1, 16], 8, 3).unwrap())
}

fn config(variant: Variant, seed: u64) -> SamplerConfig {
    SamplerConfig { variant, ..SamplerConfig::defaults(8, 0.05, seed) }
}

#[test]
fn objective_terms() {
    let s = NoiseSchedule::ddpm_default();
    let op = Mask::identity(&[4]).unwrap();
    let zero = ZeroEps { dim: 4 };
    let v = Tensor::from_vec(vec![0.1, -0.2, 0.3, 0.4]);
    let y = Tensor::from_vec(vec![1.0, 0.0, 0.0, 2.0]);
    let (val, grad) = sitcom_objective(&v, &v, 0, &y, &op, &zero, 0.0, &s).unwrap();
    assert!((val.data - v.sub(&y).unwrap().norm_sq()).abs() < 1e-14);
    assert_eq!(val.regularizer, 0.0);
    assert!(grad.max_abs_diff(&v.sub(&y).unwrap().scale(2.0)).unwrap() < 1e-14);

    // A perfect fit at t > 0: f(v) = v / sqrt(abar) with a zero predictor.
    let t = 300;
    let fit = v.scale(1.0 / s.alpha_bar(t).sqrt());
    let (val, _) = sitcom_objective(&v, &v, t, &fit, &op, &zero, 0.0, &s).unwrap();
    assert!(val.data < 1e-24);

    let x_i = Tensor::zeros(&[4]);
    let (val, _) = sitcom_objective(&v, &x_i, 0, &y, &op, &zero, 2.5, &s).unwrap();
    assert!((val.regularizer - 2.5 * v.norm_sq()).abs() < 1e-14);
    assert!((val.total() - val.data - val.regularizer).abs() < 1e-15);
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 1);
    let op = Blur::new(&[4, 4], gaussian_kernel(3, 1.0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x_i = normal_tensor(&[4, 4], &mut rng);
    let v = normal_tensor(&[4, 4], &mut rng);
    let y = normal_tensor(&[16], &mut rng);
    let (_, grad) = sitcom_objective(&v, &x_i, 400, &y, &op, &model, 0.7, &s).unwrap();
    let h = 1e-5;
    for j in 0..16 {
        let mut plus = v.clone();
        plus.data_mut()[j] += h;
        let mut minus = v.clone();
        minus.data_mut()[j] -= h;
        let fp = sitcom_objective(&plus, &x_i, 400, &y, &op, &model, 0.7, &s).unwrap().0.total();
        let fm = sitcom_objective(&minus, &x_i, 400, &y, &op, &model, 0.7, &s).unwrap().0.total();
        let fd = (fp - fm) / (2.0 * h);
        let g = grad.data()[j];
        assert!((fd - g).abs() / g.abs().max(1e-3) < 1e-4, "coordinate {j}: {fd} vs {g}");
    }
}

#[test]
fn single_gd_step_is_one_gradient_step() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 3);
    let p = problem(mask16(), &model, 0.05, 1);
    let x_i = normal_tensor(&[1, 16], &mut ChaCha8Rng::seed_from_u64(4));
    let cfg =
        SamplerConfig { k_max: 1, delta: 0.0, gamma: 0.03, optimizer: OptimizerKind::Gd, ..config(Variant::Sitcom, 0) };
    let res = inner_optimize(&x_i, 600, &p.y, p.operator.as_ref(), &model, &s, &cfg, 7).unwrap();
    let (_, g) = sitcom_objective(&x_i, &x_i, 600, &p.y, p.operator.as_ref(), &model, 0.0, &s).unwrap();
    let mut expect = x_i.clone();
    expect.axpy(-0.03, &g).unwrap();
    assert_eq!(res.iterations, 1);
    assert_eq!(res.reason, BreakReason::Budget);
    assert!(res.v.max_abs_diff(&expect).unwrap() < 1e-15);
    let xhat = tweedie_denoise(&expect, 600, &model, &s).unwrap();
    assert!(res.xhat0.max_abs_diff(&xhat).unwrap() < 1e-12);
    assert_eq!(res.trace.len(), 2);
}

#[test]
fn infinite_delta_stops_before_any_update() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 5);
    let p = problem(mask16(), &model, 0.05, 2);
    let x_i = normal_tensor(&[1, 16], &mut ChaCha8Rng::seed_from_u64(6));
    let cfg = SamplerConfig { delta: f64::INFINITY, ..config(Variant::Sitcom, 0) };
    let res = inner_optimize(&x_i, 500, &p.y, p.operator.as_ref(), &model, &s, &cfg, 1).unwrap();
    assert_eq!(res.iterations, 0);
    assert_eq!(res.reason, BreakReason::Threshold);
    assert_eq!(res.v, x_i);
    let direct = tweedie_denoise(&x_i, 500, &model, &s).unwrap();
    assert!(res.xhat0.max_abs_diff(&direct).unwrap() < 1e-12);
}

#[test]
fn linear_gaussian_inner_loop_converges() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 7);
    let p = problem(mask16(), &model, 0.0, 3);
    let x_i = normal_tensor(&[1, 16], &mut ChaCha8Rng::seed_from_u64(8));
    let cfg = SamplerConfig {
        k_max: 200,
        delta: 0.0,
        gamma: 0.2,
        optimizer: OptimizerKind::Gd,
        ..config(Variant::Sitcom, 0)
    };
    let res = inner_optimize(&x_i, 50, &p.y, p.operator.as_ref(), &model, &s, &cfg, 1).unwrap();
    let first = res.trace[0];
    assert!(res.value.data <= 1e-6 * first, "{} vs {first}", res.value.data);
}

#[test]
fn inner_descent_is_monotone_on_convex_problem() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 9);
    for kind in [OptimizerKind::Gd, OptimizerKind::Adam] {
        let mut steps = 0;
        let mut non_increasing = 0;
        for seed in 0..5 {
            let p = problem(mask16(), &model, 0.05, seed);
            let x_i = normal_tensor(&[1, 16], &mut ChaCha8Rng::seed_from_u64(seed + 100));
            let cfg = SamplerConfig {
                k_max: 40,
                delta: 0.0,
                gamma: if kind == OptimizerKind::Gd { 0.1 } else { 0.01 },
                optimizer: kind,
                lambda: 0.5,
                ..config(Variant::Sitcom, 0)
            };
            let res = inner_optimize(&x_i, 200, &p.y, p.operator.as_ref(), &model, &s, &cfg, 1).unwrap();
            for w in res.trace.windows(2) {
                steps += 1;
                if w[1] <= w[0] {
                    non_increasing += 1;
                }
            }
        }
        assert!(non_increasing as f64 >= 0.9 * steps as f64, "{kind:?}: {non_increasing}/{steps}");
    }
}

#[test]
fn divergence_reports_step_and_iteration() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 10);
    let p = problem(mask16(), &model, 0.05, 4);
    let x_i = normal_tensor(&[1, 16], &mut ChaCha8Rng::seed_from_u64(11));
    let cfg = SamplerConfig { delta: 0.0, gamma: 1e300, optimizer: OptimizerKind::Gd, ..config(Variant::Sitcom, 0) };
    match inner_optimize(&x_i, 300, &p.y, p.operator.as_ref(), &model, &s, &cfg, 13) {
        Err(Error::InnerDiverged { step: 13, iteration }) => assert!(iteration <= 2),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn proposition_one_trajectories_coincide() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 12);
    let ops: Vec<Arc<dyn ForwardOperator>> =
        vec![mask16(), Arc::new(Blur::new(&[4, 4], gaussian_kernel(3, 0.8).unwrap()).unwrap())];
    for op in ops {
        for seed in 0..5 {
            let p = problem(op.clone(), &model, 0.05, seed);
            let zeta = 0.02;
            let a = SamplerConfig {
                k_max: 1,
                lambda: 0.0,
                delta: 0.0,
                gamma: zeta,
                optimizer: OptimizerKind::Gd,
                ..config(Variant::Sitcom, seed)
            };
            let b =
                SamplerConfig { variant: Variant::DpsResample { zeta: ZetaSchedule::Constant { zeta } }, ..a.clone() };
            let ra = sample(&p, &model, &s, &a).unwrap();
            let rb = sample(&p, &model, &s, &b).unwrap();
            for (xa, xb) in ra.trajectory.iter().zip(&rb.trajectory) {
                assert!(xa.max_abs_diff(xb).unwrap() < 1e-10, "{} seed {seed}", op.name());
            }
        }
    }
}

#[test]
fn every_variant_is_deterministic() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 13);
    let p = problem(mask16(), &model, 0.05, 5);
    let variants = [
        Variant::Sitcom,
        Variant::SitcomOde { n_ode: 3 },
        Variant::NoBackward,
        Variant::Dps { zeta: ZetaSchedule::Normalized { zeta0: 0.5 } },
        Variant::DpsResample { zeta: ZetaSchedule::Constant { zeta: 0.05 } },
        Variant::DdpmUnconditional,
    ];
    for v in variants {
        let cfg = SamplerConfig { n_steps: 6, k_max: 5, ..config(v, 21) };
        let a = sample(&p, &model, &s, &cfg).unwrap();
        let b = sample(&p, &model, &s, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory, "{}", v.label());
        assert_eq!(a.steps, b.steps, "{}", v.label());
        assert_eq!(a.trajectory.len(), 7);
        assert_eq!(a.steps.len(), 6);
        assert!(a.x0.all_finite());
        let other = sample(&p, &model, &s, &SamplerConfig { seed: 22, ..cfg }).unwrap();
        assert_ne!(a.x0, other.x0, "{}", v.label());
    }
}

#[test]
fn identity_problem_recovers_measurements() {
    let s = NoiseSchedule::ddpm_default();
    let zero = ZeroEps { dim: 6 };
    let op: Arc<dyn ForwardOperator> = Arc::new(Mask::identity(&[6]).unwrap());
    let y = Tensor::from_vec(vec![0.5, -0.3, 0.9, 0.0, -1.0, 0.2]);
    let p = ProblemInstance::from_measurements(y.clone(), 0.0, op).unwrap();
    let t = s.t_max();
    let cfg = SamplerConfig {
        n_steps: 1,
        k_max: 200,
        delta: 1e-9,
        // Half the inverse curvature of ||v / sqrt(abar) - y||^2.
        gamma: 0.25 * s.alpha_bar(t),
        optimizer: OptimizerKind::Gd,
        ..SamplerConfig::defaults(6, 0.0, 3)
    };
    let run = sitcom_sample(&p, &zero, &s, &cfg).unwrap();
    assert!(run.x0.max_abs_diff(&y).unwrap() < 1e-6);
    assert_eq!(run.steps[0].t, t);
    assert_eq!(run.steps[0].t_prev, 0);
}

#[test]
fn early_breaks_satisfy_the_threshold() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 14);
    let mut early = 0;
    for seed in 0..4 {
        let p = problem(mask16(), &model, 0.05, seed);
        let cfg = SamplerConfig { n_steps: 10, k_max: 30, gamma: 0.05, ..SamplerConfig::defaults(8, 0.05, seed) };
        for variant in [Variant::Sitcom, Variant::NoBackward] {
            let run = sample(&p, &model, &s, &SamplerConfig { variant, ..cfg.clone() }).unwrap();
            for st in &run.steps {
                match st.break_reason {
                    BreakReason::Threshold => {
                        early += 1;
                        assert!(st.data_term < cfg.delta * cfg.delta);
                        assert!(st.iterations < cfg.k_max);
                    }
                    BreakReason::Budget => assert_eq!(st.iterations, cfg.k_max),
                    BreakReason::Fixed => panic!("unexpected fixed step"),
                }
                assert_eq!(st.objective_trace.len(), st.iterations + 1);
            }
        }
    }
    assert!(early > 0, "no step stopped early");
}

#[test]
fn common_scaling_leaves_iterates_unchanged() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 15);
    let op = mask16();
    let p = problem(op.clone(), &model, 0.05, 6);
    let c = 3.0;
    let scaled = ProblemInstance { y: p.y.scale(c), operator: Arc::new(Scaled::new(op, c)), ..p.clone() };
    let base = SamplerConfig {
        n_steps: 8,
        k_max: 10,
        lambda: 0.3,
        gamma: 0.02,
        optimizer: OptimizerKind::Gd,
        ..SamplerConfig::defaults(8, 0.05, 9)
    };
    let scaled_cfg = SamplerConfig {
        lambda: base.lambda * c * c,
        delta: base.delta * c,
        gamma: base.gamma / (c * c),
        ..base.clone()
    };
    let a = sitcom_sample(&p, &model, &s, &base).unwrap();
    let b = sitcom_sample(&scaled, &model, &s, &scaled_cfg).unwrap();
    for (xa, xb) in a.trajectory.iter().zip(&b.trajectory) {
        assert!(xa.max_abs_diff(xb).unwrap() < 1e-8);
    }
}

#[test]
fn zero_guidance_reduces_to_unguided_chains() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 16);
    let p = problem(mask16(), &model, 0.05, 7);
    let zero = ZetaSchedule::Constant { zeta: 0.0 };
    let base = SamplerConfig { n_steps: 12, ..config(Variant::DdpmUnconditional, 4) };
    let ddpm = sample(&p, &model, &s, &base).unwrap();
    let dps = sample(&p, &model, &s, &SamplerConfig { variant: Variant::Dps { zeta: zero }, ..base.clone() }).unwrap();
    for (a, b) in ddpm.trajectory.iter().zip(&dps.trajectory) {
        assert!(a.max_abs_diff(b).unwrap() < 1e-12);
    }

    let res = sample(&p, &model, &s, &SamplerConfig { variant: Variant::DpsResample { zeta: zero }, ..base.clone() })
        .unwrap();
    let times = s.sampler_times(12).unwrap();
    let mut noise = stream(4, Stream::Step);
    let mut x = res.trajectory[0].clone();
    for i in (1..=12).rev() {
        let eta = normal_tensor(x.shape(), &mut noise);
        let xhat = tweedie_denoise(&x, times[i], &model, &s).unwrap();
        x = resample(&xhat, times[i - 1], &eta, &s).unwrap();
    }
    assert!(x.max_abs_diff(&res.x0).unwrap() < 1e-12);
}

#[test]
fn single_step_ode_matches_plain_sitcom() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 17);
    let p = problem(mask16(), &model, 0.05, 8);
    let base = SamplerConfig { n_steps: 10, k_max: 8, ..config(Variant::Sitcom, 5) };
    let a = sample(&p, &model, &s, &base).unwrap();
    let b = sample(&p, &model, &s, &SamplerConfig { variant: Variant::SitcomOde { n_ode: 1 }, ..base }).unwrap();
    assert!(a.x0.max_abs_diff(&b.x0).unwrap() < 1e-6);
}

#[test]
fn config_validation() {
    let good = SamplerConfig::defaults(10, 0.05, 0);
    assert!((good.delta - 0.051 * 10f64.sqrt()).abs() < 1e-15);
    assert!(good.validate().is_ok());
    let bad = [
        SamplerConfig { n_steps: 0, ..good.clone() },
        SamplerConfig { k_max: 0, ..good.clone() },
        SamplerConfig { lambda: -1.0, ..good.clone() },
        SamplerConfig { delta: f64::NAN, ..good.clone() },
        SamplerConfig { gamma: 0.0, ..good.clone() },
        SamplerConfig { variant: Variant::SitcomOde { n_ode: 0 }, ..good.clone() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))), "{cfg:?}");
    }
}

#[test]
fn mismatched_calls_are_rejected() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 18);
    let p = problem(mask16(), &model, 0.05, 9);
    let cfg = config(Variant::NoBackward, 0);
    assert!(sitcom_sample(&p, &model, &s, &cfg).is_err());
    assert!(dps_sample(&p, &model, &s, &cfg).is_err());
    let small = ZeroEps { dim: 4 };
    assert!(sample(&p, &small, &s, &cfg).is_err());
}

#[test]
fn config_json_round_trip() {
    let cfg = SamplerConfig {
        variant: Variant::Dps { zeta: ZetaSchedule::Normalized { zeta0: 1.0 } },
        mapping: Mapping::Ancestral,
        ..SamplerConfig::defaults(4, 0.1, 2)
    };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: SamplerConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    let minimal = r#"{"n_steps":5,"k_max":3,"lambda":0,"delta":0.1,"gamma":0.01,"seed":1,"variant":{"kind":"sitcom-ode","n_ode":4}}"#;
    let parsed: SamplerConfig = serde_json::from_str(minimal).unwrap();
    assert_eq!(parsed.optimizer, OptimizerKind::Adam);
    assert_eq!(parsed.mapping, Mapping::Resample);
    assert!(serde_json::from_str::<SamplerConfig>(&minimal.replace("\"seed\"", "\"sed\"")).is_err());
}

#[test]
fn best_of_k_selection() {
    let s = NoiseSchedule::ddpm_default();
    let model = gaussian_model(16, 19);
    let p = problem(mask16(), &model, 0.05, 10);
    let cfg = SamplerConfig { n_steps: 5, k_max: 4, ..config(Variant::Sitcom, 30) };
    let one = best_of_k(&p, &model, &s, &cfg, 1, Selector::Residual).unwrap();
    assert_eq!(one.best_run().x0, sample(&p, &model, &s, &cfg).unwrap().x0);

    let four = best_of_k(&p, &model, &s, &cfg, 4, Selector::Residual).unwrap();
    assert_eq!(four.runs.len(), 4);
    for (j, run) in four.runs.iter().enumerate() {
        let r = crate::metrics::residual_norm(&p, &run.x0).unwrap();
        assert_eq!(r, four.scores[j]);
        assert!(four.scores[four.best] <= r);
    }
    let by_psnr = best_of_k(&p, &model, &s, &cfg, 4, Selector::Psnr).unwrap();
    for (a, b) in by_psnr.runs.iter().zip(&four.runs) {
        assert_eq!(a.trajectory, b.trajectory);
    }
    assert!(best_of_k(&p, &model, &s, &cfg, 0, Selector::Residual).is_err());
    let blind = ProblemInstance { x_true: None, ..p };
    assert!(best_of_k(&blind, &model, &s, &cfg, 2, Selector::Psnr).is_err());
}
