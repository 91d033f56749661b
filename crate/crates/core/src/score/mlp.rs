use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ScoreModel;
use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Architecture of the noise-prediction MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub dim: usize,
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    /// Sinusoidal time-embedding frequencies (the embedding has twice as many
    /// features).
    pub frequencies: usize,
    /// Schedule length used to normalise time to `[0, 1]`.
    pub t_max: usize,
}

impl MlpConfig {
    pub fn new(dim: usize, t_max: usize) -> Self {
        Self { dim, hidden: 128, depth: 3, frequencies: 8, t_max }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.depth == 0 || self.frequencies == 0 || self.t_max == 0 {
            return Err(invalid(format!("every MLP size must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Names and shapes of all weight arrays, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, h, e) = (self.dim, self.hidden, 2 * self.frequencies);
        let mut out =
            vec![("in.w_x".to_string(), vec![d, h]), ("in.w_t".to_string(), vec![e, h]), ("in.b".to_string(), vec![h])];
        for l in 1..self.depth {
            out.push((format!("hidden{l}.w"), vec![h, h]));
            out.push((format!("hidden{l}.b"), vec![h]));
        }
        out.push(("out.w".to_string(), vec![h, d]));
        out.push(("out.b".to_string(), vec![d]));
        out
    }
}

/// Time-conditioned MLP: `[x, embed(t / T)] -> hidden (SiLU) x depth -> eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Uniform Glorot initialisation from `seed`.
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Training);
        let params = config
            .layout()
            .into_iter()
            .map(|(_, shape)| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let (fan_in, fan_out) = (shape[0], shape[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new(-limit, limit).expect("positive limit");
                let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("layout shape")
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Same as [`Mlp::new`] with the output layer zeroed, so the network
    /// predicts zero noise everywhere until trained.
    pub fn with_zero_output(config: MlpConfig, seed: u64) -> Result<Self> {
        let mut m = Self::new(config, seed)?;
        let n = m.params.len();
        for p in &mut m.params[n - 2..] {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    pub fn from_params(config: MlpConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len() {
            return Err(invalid(format!("expected {} weight arrays, got {}", layout.len(), params.len())));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(invalid(format!("weight {name} has shape {:?}, expected {shape:?}", p.shape())));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// `[batch, 2F]` sinusoidal features of `t / T`; frequencies are
    /// log-spaced from 1 to 1000.
    pub fn time_embedding(&self, t: &[usize]) -> Tensor {
        let f = self.config.frequencies;
        let omega: Vec<f64> =
            (0..f).map(|k| if f == 1 { 1.0 } else { (k as f64 * 1000f64.ln() / (f - 1) as f64).exp() }).collect();
        let mut data = Vec::with_capacity(t.len() * 2 * f);
        for &ti in t {
            let tau = ti as f64 / self.config.t_max as f64;
            data.extend(omega.iter().map(|w| (w * tau).sin()));
            data.extend(omega.iter().map(|w| (w * tau).cos()));
        }
        Tensor::new(vec![t.len(), 2 * f], data).expect("non-empty batch")
    }

    /// Record the forward pass for `x: [batch, dim]` with weights already on
    /// the tape (`weights` in [`MlpConfig::layout`] order).
    pub fn forward(&self, g: &mut Graph, x: Var, t: &[usize], weights: &[Var]) -> Result<Var> {
        let emb = g.constant(self.time_embedding(t));
        let mut h = g.affine(x, weights[0], weights[2])?;
        let te = g.matmul(emb, weights[1])?;
        h = g.add(h, te)?;
        h = g.silu(h)?;
        let mut w = 3;
        for _ in 1..self.config.depth {
            h = g.affine(h, weights[w], weights[w + 1])?;
            h = g.silu(h)?;
            w += 2;
        }
        g.affine(h, weights[w], weights[w + 1])
    }

    /// Put the weights on the tape, tracked or constant.
    pub fn weights_on(&self, g: &mut Graph, tracked: bool) -> Vec<Var> {
        self.params.iter().map(|p| if tracked { g.param(p.clone()) } else { g.constant(p.clone()) }).collect()
    }

    /// Perturb every weight by uniform noise of the given amplitude. Used to
    /// obtain a generic (non-trained) network for tests.
    pub fn jitter<R: Rng>(&mut self, amplitude: f64, rng: &mut R) {
        for p in &mut self.params {
            for v in p.data_mut() {
                *v += rng.random_range(-amplitude..amplitude);
            }
        }
    }
}

impl ScoreModel for Mlp {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn eps(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.eps_graph(&mut g, xv, t)?;
        g.value(out).clone().reshape(x.shape())
    }

    fn eps_graph(&self, g: &mut Graph, x: Var, t: usize) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let d = self.config.dim;
        if shape.iter().product::<usize>() != d {
            return Err(Error::ShapeMismatch { op: "mlp input", left: shape, right: vec![d] });
        }
        let row = g.reshape(x, &[1, d])?;
        let weights = self.weights_on(g, false);
        let out = self.forward(g, row, &[t], &weights)?;
        g.reshape(out, &shape)
    }

    fn eps_batch(&self, x: &Tensor, t: &[usize]) -> Result<Tensor> {
        if x.shape() != [t.len(), self.config.dim] {
            return Err(Error::ShapeMismatch {
                op: "mlp batch",
                left: x.shape().to_vec(),
                right: vec![t.len(), self.config.dim],
            });
        }
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let weights = self.weights_on(&mut g, false);
        let out = self.forward(&mut g, xv, t, &weights)?;
        Ok(g.value(out).clone())
    }
}
