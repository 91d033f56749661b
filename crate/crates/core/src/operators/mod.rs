//! Measurement operators `y = A(x)` and measurement synthesis.
//!
//! Every operator takes a signal with `n` entries, laid out in
//! [`ForwardOperator::input_shape`], and returns a flat `[m]` measurement
//! vector.

mod linear;
mod measure;
mod nonlinear;

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use linear::{gaussian_kernel, motion_kernel, Blur, Downsample, FourierMask, Mask, RowPattern};
pub use measure::{synthesize_measurements, NoiseModel, ProblemInstance};
pub use nonlinear::{DynamicRangeClip, PhaseRetrieval};

pub trait ForwardOperator: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Signal layout expected by [`apply`](Self::apply).
    fn input_shape(&self) -> &[usize];

    /// Number of measurements.
    fn m(&self) -> usize;

    fn is_linear(&self) -> bool;

    fn apply(&self, x: &Tensor) -> Result<Tensor>;

    /// Transpose of a linear operator.
    fn adjoint(&self, _y: &Tensor) -> Result<Tensor> {
        Err(Error::NoAdjoint)
    }

    /// [`apply`](Self::apply) on a tape.
    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var>;

    /// Signal dimension.
    fn n(&self) -> usize {
        self.input_shape().iter().product()
    }
}

pub(crate) fn check_signal(op: &dyn ForwardOperator, x: &Tensor) -> Result<Tensor> {
    if x.len() != op.n() {
        return Err(Error::ShapeMismatch {
            op: "operator input",
            left: x.shape().to_vec(),
            right: op.input_shape().to_vec(),
        });
    }
    x.clone().reshape(op.input_shape())
}

pub(crate) fn check_measurement(op: &dyn ForwardOperator, y: &Tensor) -> Result<()> {
    if y.len() != op.m() {
        return Err(Error::ShapeMismatch { op: "operator measurement", left: y.shape().to_vec(), right: vec![op.m()] });
    }
    Ok(())
}

/// Reshape a tape variable to the operator's input layout.
pub(crate) fn graph_input(op: &dyn ForwardOperator, g: &mut Graph, x: Var) -> Result<Var> {
    if g.shape(x) == op.input_shape() {
        return Ok(x);
    }
    g.reshape(x, op.input_shape())
}

/// `c * A(x)` for a positive constant `c`.
#[derive(Debug, Clone)]
pub struct Scaled {
    inner: Arc<dyn ForwardOperator>,
    factor: f64,
    name: String,
}

impl Scaled {
    pub fn new(inner: Arc<dyn ForwardOperator>, factor: f64) -> Self {
        let name = format!("{}*{factor}", inner.name());
        Self { inner, factor, name }
    }
}

impl ForwardOperator for Scaled {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_shape(&self) -> &[usize] {
        self.inner.input_shape()
    }

    fn m(&self) -> usize {
        self.inner.m()
    }

    fn is_linear(&self) -> bool {
        self.inner.is_linear()
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.inner.apply(x)?.scale(self.factor))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        Ok(self.inner.adjoint(y)?.scale(self.factor))
    }

    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = self.inner.apply_graph(g, x)?;
        g.scale(y, self.factor)
    }
}
