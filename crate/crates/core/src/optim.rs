//! First-order optimizers shared by the samplers and training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Gd,
}

/// Bias-corrected Adam moments for one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    step: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self { m: Tensor::zeros(shape), v: Tensor::zeros(shape), step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    /// In-place update `var -= gamma * mhat / (sqrt(vhat) + eps)`.
    pub fn update(&mut self, var: &mut Tensor, grad: &Tensor, gamma: f64) -> Result<()> {
        if var.shape() != grad.shape() || var.shape() != self.m.shape() {
            return Err(Error::ShapeMismatch { op: "adam", left: var.shape().to_vec(), right: grad.shape().to_vec() });
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (m, v) = (self.m.data_mut(), self.v.data_mut());
        for (((x, g), m), v) in var.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *x -= gamma * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step(state: &mut AdamState, grad: &Tensor, var: &Tensor, gamma: f64) -> Result<Tensor> {
    let mut out = var.clone();
    state.update(&mut out, grad, gamma)?;
    Ok(out)
}

/// `var - gamma * grad`.
pub fn gd_step(var: &Tensor, grad: &Tensor, gamma: f64) -> Result<Tensor> {
    var.zip_map(grad, |x, g| x - gamma * g)
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Gd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, shape: &[usize]) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam(AdamState::new(shape)),
            OptimizerKind::Gd => Self::Gd,
        }
    }

    pub fn update(&mut self, var: &mut Tensor, grad: &Tensor, gamma: f64) -> Result<()> {
        match self {
            Self::Adam(s) => s.update(var, grad, gamma),
            Self::Gd => var.axpy(-gamma, grad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut s = AdamState::new(&[3]);
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let g = Tensor::from_vec(vec![1.0, -4.0, 0.5]);
        let out = adam_step(&mut s, &g, &x, 0.01).unwrap();
        for i in 0..3 {
            let gi = g.data()[i];
            let expected = x.data()[i] - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((out.data()[i] - expected).abs() < 1e-15);
        }
        // At g = 1 the step is gamma up to the epsilon term.
        assert!((x.data()[0] - out.data()[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_variable() {
        let mut s = AdamState::new(&[2]);
        let x = Tensor::from_vec(vec![0.3, -0.7]);
        let out = adam_step(&mut s, &Tensor::zeros(&[2]), &x, 0.1).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn constant_gradient_gives_sign_steps() {
        let mut s = AdamState::new(&[3]);
        let g = Tensor::from_vec(vec![2.0, -0.001, 50.0]);
        let mut x = Tensor::zeros(&[3]);
        let mut prev = x.clone();
        for _ in 0..500 {
            prev = x.clone();
            s.update(&mut x, &g, 0.01).unwrap();
        }
        let step = prev.sub(&x).unwrap();
        for (d, gi) in step.data().iter().zip(g.data()) {
            assert!((d - 0.01 * gi.signum()).abs() < 1e-6, "{d}");
        }
    }

    #[test]
    fn gd_is_plain_descent() {
        let x = Tensor::from_vec(vec![1.0, 1.0]);
        let g = Tensor::from_vec(vec![2.0, -1.0]);
        assert_eq!(gd_step(&x, &g, 0.5).unwrap().data(), &[0.0, 1.5]);
        let mut opt = Optimizer::new(OptimizerKind::Gd, &[2]);
        let mut y = x.clone();
        opt.update(&mut y, &g, 0.5).unwrap();
        assert_eq!(y.data(), &[0.0, 1.5]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = AdamState::new(&[2]);
        assert!(adam_step(&mut s, &Tensor::zeros(&[3]), &Tensor::zeros(&[3]), 0.1).is_err());
    }
}
