//! Denoising score matching.

use rand::Rng;

use super::{forward_diffuse, NoiseSchedule};
use crate::autodiff::Graph;
use crate::error::{invalid, Error, Result};
use crate::optim::AdamState;
use crate::rng::{normal_tensor, stream, Stream};
use crate::score::{Mlp, ScoreModel};
use crate::tensor::Tensor;

/// Clean samples, diffusion times and injected noise for one loss
/// evaluation. `x0` and `noise` are `[batch, dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub x0: Tensor,
    pub times: Vec<usize>,
    pub noise: Tensor,
}

impl TrainBatch {
    pub fn new(x0: Tensor, times: Vec<usize>, noise: Tensor) -> Result<Self> {
        if x0.shape().len() != 2 || x0.shape()[0] != times.len() || x0.shape() != noise.shape() {
            return Err(Error::ShapeMismatch {
                op: "train batch",
                left: x0.shape().to_vec(),
                right: noise.shape().to_vec(),
            });
        }
        Ok(Self { x0, times, noise })
    }

    /// Draw `size` rows of `data` uniformly with times in `1..=T`.
    pub fn sample<R: Rng + ?Sized>(data: &Tensor, size: usize, t_max: usize, rng: &mut R) -> Result<Self> {
        if data.shape().len() != 2 || size == 0 {
            return Err(invalid("training data must be [count, dim] and the batch non-empty"));
        }
        let (count, d) = (data.shape()[0], data.shape()[1]);
        let mut x0 = Vec::with_capacity(size * d);
        let mut times = Vec::with_capacity(size);
        for _ in 0..size {
            x0.extend_from_slice(data.row(rng.random_range(0..count)));
            times.push(rng.random_range(1..=t_max));
        }
        let noise = normal_tensor(&[size, d], rng);
        Self::new(Tensor::new(vec![size, d], x0)?, times, noise)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The diffused inputs `sqrt(abar_t) x0 + sqrt(1 - abar_t) noise`, row by
    /// row.
    pub fn diffused(&self, sched: &NoiseSchedule) -> Result<Tensor> {
        let d = self.x0.shape()[1];
        let mut out = Vec::with_capacity(self.x0.len());
        for (i, &t) in self.times.iter().enumerate() {
            let x = Tensor::from_vec(self.x0.row(i).to_vec());
            let e = Tensor::from_vec(self.noise.row(i).to_vec());
            out.extend(forward_diffuse(&x, t, &e, sched)?.into_data());
        }
        Tensor::new(vec![self.len(), d], out)
    }
}

/// Mean over the batch of `||noise - eps(x_t, t)||^2`.
pub fn dsm_loss(model: &dyn ScoreModel, batch: &TrainBatch, sched: &NoiseSchedule) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let xt = batch.diffused(sched)?;
    let pred = model.eps_batch(&xt, &batch.times)?;
    Ok(pred.sub(&batch.noise)?.norm_sq() / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// The learning rate follows a cosine from `lr` down to `lr * lr_floor`.
    pub lr_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iters: 2000, batch: 128, lr: 2e-3, seed: 0, lr_floor: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

/// Adam on the denoising score-matching loss. Batches come from the
/// training stream of `config.seed`, so equal seeds give bit-identical
/// weights.
pub fn train_score_model(
    model: &mut Mlp,
    data: &Tensor,
    sched: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if data.shape().len() != 2 || data.shape()[1] != model.dim() {
        return Err(Error::ShapeMismatch {
            op: "training data",
            left: data.shape().to_vec(),
            right: vec![0, model.dim()],
        });
    }
    if config.batch == 0 || !(config.lr > 0.0) {
        return Err(invalid("training needs a positive batch size and learning rate"));
    }
    let mut rng = stream(config.seed, Stream::Training);
    let mut states: Vec<AdamState> = model.params().iter().map(|p| AdamState::new(p.shape())).collect();
    let mut losses = Vec::with_capacity(config.iters);
    for it in 0..config.iters {
        let batch = TrainBatch::sample(data, config.batch, sched.t_max(), &mut rng)?;
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::TrainingDiverged(it),
            other => other,
        };
        let mut g = Graph::new();
        let weights = model.weights_on(&mut g, true);
        let loss = dsm_graph(model, &mut g, &weights, &batch, sched).map_err(diverged)?;
        let value = g.value(loss).item();
        losses.push(value);
        let grads = g.backward(loss).map_err(diverged)?;
        let progress = it as f64 / config.iters as f64;
        let lr = config.lr
            * (config.lr_floor + (1.0 - config.lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        for ((p, w), st) in model.params_mut().iter_mut().zip(&weights).zip(&mut states) {
            let grad = grads.get(&g, *w)?;
            st.update(p, &grad, lr)?;
        }
        if model.params().iter().any(|p| !p.all_finite()) {
            return Err(Error::TrainingDiverged(it));
        }
    }
    Ok(TrainReport { losses })
}

fn dsm_graph(
    model: &Mlp,
    g: &mut Graph,
    weights: &[crate::autodiff::Var],
    batch: &TrainBatch,
    sched: &NoiseSchedule,
) -> Result<crate::autodiff::Var> {
    let x = g.constant(batch.diffused(sched)?);
    let pred = model.forward(g, x, &batch.times, weights)?;
    let target = g.constant(batch.noise.clone());
    let diff = g.sub(pred, target)?;
    let sq = g.sq_norm(diff)?;
    g.scale(sq, 1.0 / batch.len() as f64)
}
