use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use super::{check_dim, ScoreModel};
use crate::autodiff::{Graph, Var};
use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::rng::normal_tensor;
use crate::tensor::Tensor;

/// A Gaussian mixture over `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

impl GmmPrior {
    /// `covariances[k]` is an `[n, n]` tensor; it must be symmetric positive
    /// definite.
    pub fn new(weights: Vec<f64>, means: Vec<Tensor>, covariances: Vec<Tensor>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(invalid(format!(
                "mixture needs matching non-empty weights/means/covariances, got {}/{}/{}",
                weights.len(),
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights must sum to 1, got {total}")));
        }
        let n = means[0].len();
        let mut ms = Vec::with_capacity(means.len());
        let mut cs = Vec::with_capacity(means.len());
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != n || c.shape() != [n, n] {
                return Err(Error::ShapeMismatch {
                    op: "mixture component",
                    left: c.shape().to_vec(),
                    right: vec![n, n],
                });
            }
            let cov = DMatrix::from_row_slice(n, n, c.data());
            if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
                return Err(invalid("covariance is not symmetric"));
            }
            if cov.clone().cholesky().is_none() {
                return Err(invalid("covariance is not positive definite"));
            }
            ms.push(DVector::from_column_slice(m.data()));
            cs.push(cov);
        }
        Ok(Self { weights, means: ms, covariances: cs })
    }

    /// Mixture with diagonal covariances given as variance vectors.
    pub fn diagonal(weights: Vec<f64>, means: Vec<Tensor>, variances: Vec<Tensor>) -> Result<Self> {
        let covs = variances
            .iter()
            .map(|v| {
                let n = v.len();
                let mut c = vec![0.0; n * n];
                for (i, &s) in v.data().iter().enumerate() {
                    c[i * n + i] = s;
                }
                Tensor::new(vec![n, n], c)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, means, covs)
    }

    /// A single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: Tensor, cov: Tensor) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    /// Parse a text description:
    ///
    /// ```text
    /// # comment
    /// component <weight> mean <m_1 .. m_n> var <s_1 .. s_n>
    /// ```
    ///
    /// one line per component, with diagonal variances.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| invalid(format!("mixture line {}: {what}", lineno + 1));
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.first() != Some(&"component") {
                return Err(bad("expected `component`"));
            }
            let mean_at = tokens.iter().position(|t| *t == "mean").ok_or_else(|| bad("missing `mean`"))?;
            let var_at = tokens.iter().position(|t| *t == "var").ok_or_else(|| bad("missing `var`"))?;
            if mean_at != 2 || var_at < mean_at + 2 {
                return Err(bad("expected `component <w> mean ... var ...`"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("not a number: {s}")));
            weights.push(num(tokens[1])?);
            let m = tokens[3..var_at].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            let v = tokens[var_at + 1..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            if m.len() != v.len() || m.is_empty() {
                return Err(bad("mean and var lengths differ"));
            }
            means.push(Tensor::from_vec(m));
            vars.push(Tensor::from_vec(v));
        }
        Self::diagonal(weights, means, vars)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> Tensor {
        Tensor::from_vec(self.means[k].as_slice().to_vec())
    }

    pub fn covariance(&self, k: usize) -> Tensor {
        let n = self.dim();
        let c = &self.covariances[k];
        let data = (0..n * n).map(|i| c[(i / n, i % n)]).collect();
        Tensor::new(vec![n, n], data).expect("square")
    }

    /// `[count, n]` independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Tensor> {
        if count == 0 {
            return Err(invalid("sample count must be positive"));
        }
        let n = self.dim();
        let roots: Vec<DMatrix<f64>> =
            self.covariances.iter().map(|c| c.clone().cholesky().expect("validated").l()).collect();
        let mut data = Vec::with_capacity(count * n);
        for _ in 0..count {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = self.weights.len() - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = j;
                    break;
                }
            }
            let z = DVector::from_vec(normal_tensor(&[n], rng).into_data());
            let x = &self.means[k] + &roots[k] * z;
            data.extend(x.iter());
        }
        Tensor::new(vec![count, n], data)
    }

    /// Log-density of the mixture diffused to schedule time `t`.
    pub fn diffused_log_density(&self, x: &Tensor, alpha_bar: f64) -> Result<f64> {
        let eig = self.eigen();
        let parts = evaluate(&self.weights, &self.means, &eig, x.data(), alpha_bar);
        Ok(parts.log_density)
    }

    fn eigen(&self) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        self.covariances
            .iter()
            .map(|c| {
                let e = SymmetricEigen::new(c.clone());
                (e.eigenvectors, e.eigenvalues)
            })
            .collect()
    }
}

struct Evaluation {
    score: DVector<f64>,
    log_density: f64,
    resp: Vec<f64>,
    scores: Vec<DVector<f64>>,
    inv_var: Vec<DVector<f64>>,
}

fn evaluate(
    weights: &[f64],
    means: &[DVector<f64>],
    eig: &[(DMatrix<f64>, DVector<f64>)],
    x: &[f64],
    alpha_bar: f64,
) -> Evaluation {
    let n = x.len();
    let x = DVector::from_column_slice(x);
    let sa = alpha_bar.sqrt();
    let log_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut logs = Vec::with_capacity(weights.len());
    let mut scores = Vec::with_capacity(weights.len());
    let mut inv_var = Vec::with_capacity(weights.len());
    for ((w, mu), (q, lam)) in weights.iter().zip(means).zip(eig) {
        let c = lam.map(|l| alpha_bar * l + (1.0 - alpha_bar));
        let inv = c.map(|v| 1.0 / v);
        let u = &x - mu * sa;
        let proj = q.tr_mul(&u);
        let scaled = proj.component_mul(&inv);
        let quad = proj.dot(&scaled);
        let logdet: f64 = c.iter().map(|v| v.ln()).sum();
        logs.push(w.ln() - 0.5 * quad - 0.5 * logdet - 0.5 * n as f64 * log_2pi);
        scores.push(-(q * scaled));
        inv_var.push(inv);
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    let log_density = max + z.ln();
    let resp: Vec<f64> = logs.iter().map(|l| (l - log_density).exp()).collect();
    let mut score = DVector::zeros(n);
    for (r, s) in resp.iter().zip(&scores) {
        score.axpy(*r, s, 1.0);
    }
    Evaluation { score, log_density, resp, scores, inv_var }
}

/// Exact noise prediction for a diffused Gaussian mixture.
#[derive(Debug, Clone)]
pub struct AnalyticGmm {
    prior: GmmPrior,
    schedule: NoiseSchedule,
    eig: Arc<Vec<(DMatrix<f64>, DVector<f64>)>>,
}

impl AnalyticGmm {
    pub fn new(prior: GmmPrior, schedule: NoiseSchedule) -> Self {
        let eig = Arc::new(prior.eigen());
        Self { prior, schedule, eig }
    }

    pub fn prior(&self) -> &GmmPrior {
        &self.prior
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t > self.schedule.t_max() {
            return Err(invalid(format!("time {t} outside 0..={}", self.schedule.t_max())));
        }
        Ok(self.schedule.alpha_bar(t))
    }

    /// Score of the diffused mixture at `x`.
    pub fn score_at(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        check_dim(self, x)?;
        let ab = self.alpha_bar(t)?;
        let e = evaluate(&self.prior.weights, &self.prior.means, &self.eig, x.data(), ab);
        Tensor::new(x.shape().to_vec(), e.score.as_slice().to_vec())
    }
}

/// `eps(x, t)` of the diffused mixture; the free-function form of
/// [`AnalyticGmm`].
pub fn analytic_gmm_eps(x: &Tensor, t: usize, prior: &GmmPrior, sched: &NoiseSchedule) -> Result<Tensor> {
    AnalyticGmm::new(prior.clone(), sched.clone()).eps(x, t)
}

impl ScoreModel for AnalyticGmm {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn eps(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let s = self.score_at(x, t)?;
        let c = -(1.0 - self.schedule.alpha_bar(t)).sqrt();
        Ok(s.scale(c))
    }

    fn eps_graph(&self, g: &mut Graph, x: Var, t: usize) -> Result<Var> {
        let xv = g.value(x).clone();
        check_dim(self, &xv)?;
        let ab = self.alpha_bar(t)?;
        let c = -(1.0 - ab).sqrt();
        let e = evaluate(&self.prior.weights, &self.prior.means, &self.eig, xv.data(), ab);
        let value = Tensor::new(xv.shape().to_vec(), e.score.iter().map(|s| c * s).collect())?;
        let eig = Arc::clone(&self.eig);
        let shape = xv.shape().to_vec();
        // The score Jacobian is symmetric:
        //   J = sum_k r_k (-P_k) + sum_k r_k s_k s_k^T - sbar sbar^T.
        let vjp = Box::new(move |up: &Tensor| {
            let u = DVector::from_column_slice(up.data());
            let mut out = DVector::zeros(u.len());
            for (k, (q, _)) in eig.iter().enumerate() {
                let r = e.resp[k];
                if r == 0.0 {
                    continue;
                }
                let pu = q * q.tr_mul(&u).component_mul(&e.inv_var[k]);
                out.axpy(-r, &pu, 1.0);
                out.axpy(r * e.scores[k].dot(&u), &e.scores[k], 1.0);
            }
            out.axpy(-e.score.dot(&u), &e.score, 1.0);
            Tensor::new(shape.clone(), out.iter().map(|v| c * v).collect()).expect("shape")
        });
        g.custom("analytic_gmm_eps", x, value, vjp)
    }
}
