//! Toy problems shared by the integration targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use sitcom_core::diffusion::NoiseSchedule;
use sitcom_core::harness::{generate_dataset, train_to, DatasetKind, DatasetSpec, ExperimentConfig, ModelSpec};
use sitcom_core::operators::{synthesize_measurements, ForwardOperator, Mask, NoiseModel, ProblemInstance};
use sitcom_core::optim::OptimizerKind;
use sitcom_core::rng::{normal_tensor, stream, Stream};
use sitcom_core::samplers::SamplerConfig;
use sitcom_core::score::{load_checkpoint, AnalyticGmm, GmmPrior, Mlp};
use sitcom_core::Tensor;

pub const TOY_N: usize = 16;
pub const TOY_M: usize = 8;
pub const TOY_SIGMA: f64 = 0.05;

/// `sigma_y sqrt(m)` of the Gaussian toy.
pub fn toy_noise_norm() -> f64 {
    TOY_SIGMA * (TOY_M as f64).sqrt()
}

/// Gaussian prior on a 1x16 signal observed through a random mask that
/// keeps 8 entries.
pub struct GaussianToy {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub prior: GmmPrior,
    pub model: AnalyticGmm,
    pub sched: NoiseSchedule,
}

impl GaussianToy {
    fn from_parts(mu: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let sched = NoiseSchedule::ddpm_default();
        let prior = GmmPrior::gaussian(
            Tensor::from_vec(mu.as_slice().to_vec()),
            Tensor::new(vec![TOY_N, TOY_N], cov.as_slice().to_vec()).unwrap(),
        )
        .unwrap();
        let model = AnalyticGmm::new(prior.clone(), sched.clone());
        Self { mu, cov, prior, model, sched }
    }

    fn mean() -> DVector<f64> {
        let mut rng = stream(2024, Stream::Init);
        DVector::from_vec(normal_tensor(&[TOY_N], &mut rng).scale(0.3).data().to_vec())
    }

    /// Smooth squared-exponential covariance, length scale 6, plus a 3e-3
    /// nugget.
    pub fn smooth() -> Self {
        let cov = DMatrix::from_fn(TOY_N, TOY_N, |i, j| {
            let d = i as f64 - j as f64;
            0.25 * (-d * d / 72.0).exp() + if i == j { 3e-3 } else { 0.0 }
        });
        Self::from_parts(Self::mean(), cov)
    }

    /// `B B^T / n + 0.05 I` with a Gaussian `B`: nearly isotropic and
    /// far from the measurements' reach.
    pub fn diffuse() -> Self {
        let b = normal_tensor(&[TOY_N, TOY_N], &mut stream(2025, Stream::Init));
        let b = DMatrix::from_row_slice(TOY_N, TOY_N, b.data());
        let cov = &b * b.transpose() / TOY_N as f64 + DMatrix::identity(TOY_N, TOY_N) * 0.05;
        Self::from_parts(Self::mean(), cov)
    }

    /// Truth, mask and measurements for one seed.
    pub fn problem(&self, seed: u64) -> (ProblemInstance, Vec<usize>) {
        let mask = Mask::random_count(&[1, TOY_N], TOY_M, seed).unwrap();
        let kept = mask.kept().to_vec();
        let op: Arc<dyn ForwardOperator> = Arc::new(mask);
        let x = self.prior.sample(1, &mut stream(seed, Stream::Dataset)).unwrap().reshape(&[1, TOY_N]).unwrap();
        (synthesize_measurements(&x, op, TOY_SIGMA, NoiseModel::Gaussian, seed).unwrap(), kept)
    }

    /// `E[x | y]` from the joint Gaussian of `(x, y)`.
    pub fn posterior_mean(&self, problem: &ProblemInstance, kept: &[usize]) -> DVector<f64> {
        let mut a = DMatrix::zeros(kept.len(), TOY_N);
        for (r, &j) in kept.iter().enumerate() {
            a[(r, j)] = 1.0;
        }
        let y = DVector::from_row_slice(problem.y.data());
        let s = &a * &self.cov * a.transpose() + DMatrix::identity(kept.len(), kept.len()) * TOY_SIGMA.powi(2);
        let gain = s.cholesky().expect("S is positive definite").solve(&(&y - &a * &self.mu));
        &self.mu + &self.cov * a.transpose() * gain
    }

    /// SITCOM defaults with Adam at step 0.05.
    pub fn config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            gamma: 0.05,
            optimizer: OptimizerKind::Adam,
            ..SamplerConfig::defaults(TOY_M, TOY_SIGMA, seed + 1000)
        }
    }
}

pub fn rel_err(x: &Tensor, reference: &DVector<f64>) -> f64 {
    (DVector::from_row_slice(x.data()) - reference).norm() / reference.norm()
}

/// Analytic mixture on 8x8 images: four diagonal components centred on
/// blob images.
pub fn gmm_image_prior() -> GmmPrior {
    let blobs = generate_dataset(&DatasetSpec::new(DatasetKind::Blobs8, 0), 4, 31).unwrap();
    let means: Vec<Tensor> = (0..4).map(|i| Tensor::from_vec(blobs.samples.row(i).to_vec())).collect();
    let vars = vec![Tensor::from_vec(vec![0.02; 64]); 4];
    GmmPrior::diagonal(vec![0.25; 4], means, vars).unwrap()
}

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
}

/// The shipped blobs-8x8 inpainting experiment with its model cached under
/// the target directory and outputs in `out`.
pub fn blob_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&repo_root().join("configs/blobs-inpainting.json")).unwrap();
    if let ModelSpec::Mlp { checkpoint, .. } = &mut cfg.model {
        *checkpoint = Some(blob_checkpoint().to_path_buf());
    }
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Checkpoint of the blobs-8x8 MLP, trained on first use. The file name
/// carries a hash of everything that shapes training.
pub fn blob_checkpoint() -> &'static Path {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        let cfg = ExperimentConfig::load(&repo_root().join("configs/blobs-inpainting.json")).unwrap();
        let mut model = cfg.model.clone();
        if let ModelSpec::Mlp { checkpoint, .. } = &mut model {
            *checkpoint = None;
        }
        let key = serde_json::to_vec(&(&cfg.dataset, &cfg.schedule, &model)).unwrap();
        let tag = hex::encode(&Sha256::digest(&key)[..8]);
        let path = cache_dir().join(format!("blobs8-{tag}.ckpt"));
        if load_checkpoint(&path).is_err() {
            // Write then rename so an interrupted run never leaves a torn file.
            let tmp = cache_dir().join(format!("blobs8-{tag}.{}.tmp", std::process::id()));
            train_to(&cfg, &tmp).unwrap();
            std::fs::rename(&tmp, &path).unwrap();
        }
        path
    })
}

pub fn blob_mlp() -> Arc<Mlp> {
    static MODEL: OnceLock<Arc<Mlp>> = OnceLock::new();
    MODEL.get_or_init(|| Arc::new(load_checkpoint(blob_checkpoint()).unwrap())).clone()
}
