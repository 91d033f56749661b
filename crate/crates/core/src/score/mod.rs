//! Noise predictors `eps(x_t, t)`.
//!
//! A model predicts the noise in `x_t`; the score follows from
//! `eps = -sqrt(1 - abar_t) * score`.

mod checkpoint;
mod gmm;
mod mlp;

use crate::autodiff::{Graph, Var};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gmm::{analytic_gmm_eps, AnalyticGmm, GmmPrior};
pub use mlp::{Mlp, MlpConfig};

pub trait ScoreModel: Send + Sync {
    /// Number of entries in one state.
    fn dim(&self) -> usize;

    /// Noise prediction for a single state; the output has the input's shape.
    fn eps(&self, x: &Tensor, t: usize) -> Result<Tensor>;

    /// [`eps`](Self::eps) recorded on a tape, differentiable with respect to
    /// `x`.
    fn eps_graph(&self, g: &mut Graph, x: Var, t: usize) -> Result<Var>;

    /// Predictions for a `[batch, dim]` tensor with one time per row.
    fn eps_batch(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        let d = self.dim();
        if x.shape() != [t.len(), d] {
            return Err(Error::ShapeMismatch { op: "eps_batch", left: x.shape().to_vec(), right: vec![t.len(), d] });
        }
        let mut out = Vec::with_capacity(x.len());
        for (i, &ti) in t.iter().enumerate() {
            let row = Tensor::from_vec(x.row(i).to_vec());
            out.extend_from_slice(self.eps(&row, ti)?.data());
        }
        Tensor::new(vec![t.len(), d], out)
    }

    /// Whether [`eps_graph`](Self::eps_graph) propagates gradients to `x`.
    fn differentiable(&self) -> bool {
        true
    }
}

/// `score(x, t) = -eps(x, t) / sqrt(1 - abar_t)`.
pub fn score(model: &dyn ScoreModel, x: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let s = (1.0 - sched.alpha_bar(t)).sqrt();
    if s == 0.0 {
        return Err(Error::InvalidArgument("score is undefined at t = 0".into()));
    }
    Ok(model.eps(x, t)?.scale(-1.0 / s))
}

pub(crate) fn check_dim(model: &dyn ScoreModel, x: &Tensor) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::ShapeMismatch {
            op: "score model input",
            left: x.shape().to_vec(),
            right: vec![model.dim()],
        });
    }
    Ok(())
}

/// The predictor that always returns zero noise.
#[derive(Debug, Clone, Copy)]
pub struct ZeroEps {
    pub dim: usize,
}

impl ScoreModel for ZeroEps {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eps(&self, x: &Tensor, _t: usize) -> Result<Tensor> {
        check_dim(self, x)?;
        Ok(Tensor::zeros_like(x))
    }

    fn eps_graph(&self, g: &mut Graph, x: Var, _t: usize) -> Result<Var> {
        g.scale(x, 0.0)
    }
}
