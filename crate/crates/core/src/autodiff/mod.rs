//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in evaluation order, so the tape is
//! topologically sorted by construction. [`Graph::backward`] walks it once in
//! reverse. Leaves are either tracked (`param`) or constant (`constant`);
//! subgraphs that depend only on constants are skipped during the backward
//! pass.

mod check;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Dft2;
use crate::tensor::Tensor;

pub use check::{check_gradient, GradCheckReport};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

/// A linear map with a known adjoint, usable as a graph node.
pub trait LinearMap: Send + Sync {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, y: &Tensor) -> Result<Tensor>;
}

/// Vector-Jacobian product of a custom unary node: upstream gradient in,
/// input gradient out.
pub type VjpFn = Box<dyn Fn(&Tensor) -> Tensor + Send + Sync>;

/// Boundary handling for [`Graph::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Mirror without repeating the edge sample (`dcb|abcd|cba`).
    Reflect,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Affine { x: usize, w: usize, b: usize },
    Conv2d { x: usize, kernel: Tensor, padding: Padding },
    Sum(usize),
    Mean(usize),
    SqNorm(usize),
    Tanh(usize),
    Silu(usize),
    Gather { x: usize, idx: Arc<[usize]> },
    Reshape(usize),
    Linear { x: usize, map: Arc<dyn LinearMap> },
    DftMagnitude { x: usize, dft: Dft2, spectrum: Vec<Complex64>, ih: usize, iw: usize },
    Clip { x: usize, lo: f64, hi: f64 },
    Custom { x: usize, vjp: VjpFn },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// A recorded computation.
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant by the backward pass.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v).expect("foreign variable")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignVariable);
        }
        Ok(v.index)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var { graph: self.id, index: self.nodes.len() - 1 }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, operands: &[usize]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let tracked = operands.iter().any(|&i| self.nodes[i].tracked);
        Ok(self.push_unchecked(value, op, tracked))
    }

    fn binary_shapes(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let scalar = self.nodes[a].value.is_scalar() || self.nodes[b].value.is_scalar();
        if sa != sb && !scalar {
            return Err(Error::ShapeMismatch { op, left: sa.to_vec(), right: sb.to_vec() });
        }
        Ok(())
    }

    fn broadcast(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        if ta.len() == tb.len() {
            ta.zip_map(tb, f).expect("lengths checked")
        } else if ta.is_scalar() {
            let s = ta.item();
            tb.map(|v| f(s, v))
        } else {
            let s = tb.item();
            ta.map(|v| f(v, s))
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.binary_shapes("add", ia, ib)?;
        let value = self.broadcast(ia, ib, |x, y| x + y);
        self.push("add", value, Op::Add(ia, ib), &[ia, ib])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.binary_shapes("sub", ia, ib)?;
        let value = self.broadcast(ia, ib, |x, y| x - y);
        self.push("sub", value, Op::Sub(ia, ib), &[ia, ib])
    }

    /// Elementwise product; either operand may be a single-element tensor.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.binary_shapes("mul", ia, ib)?;
        let value = self.broadcast(ia, ib, |x, y| x * y);
        self.push("mul", value, Op::Mul(ia, ib), &[ia, ib])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.scale(s);
        self.push("scale", value, Op::Scale(ia, s), &[ia])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|v| v + s);
        self.push("add_scalar", value, Op::AddScalar(ia), &[ia])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (m, k, n) = self.matmul_dims("matmul", ia, ib)?;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.nodes[ia].value.data(), (k, 1), self.nodes[ib].value.data(), (n, 1), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul(ia, ib), &[ia, ib])
    }

    fn matmul_dims(&self, op: &'static str, a: usize, b: usize) -> Result<(usize, usize, usize)> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => Ok((*m, *k, *n)),
            _ => Err(Error::ShapeMismatch { op, left: sa.to_vec(), right: sb.to_vec() }),
        }
    }

    /// `x W + b` with `x: [m, k]`, `W: [k, n]`, `b: [n]` added to every row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ix, iw, ib) = (self.idx(x)?, self.idx(w)?, self.idx(b)?);
        let (m, k, n) = self.matmul_dims("affine", ix, iw)?;
        if self.nodes[ib].value.len() != n {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: self.nodes[iw].value.shape().to_vec(),
                right: self.nodes[ib].value.shape().to_vec(),
            });
        }
        let bias = self.nodes[ib].value.data();
        let mut out: Vec<f64> = (0..m).flat_map(|_| bias.iter().copied()).collect();
        gemm_acc(m, k, n, self.nodes[ix].value.data(), (k, 1), self.nodes[iw].value.data(), (n, 1), &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        self.push("affine", value, Op::Affine { x: ix, w: iw, b: ib }, &[ix, iw, ib])
    }

    /// Single-channel 2-D convolution of an `[h, w]` input with an odd-sized
    /// kernel, producing an output of the same size. A `[1, w]` input with a
    /// `[1, k]` kernel is a 1-D convolution.
    pub fn conv2d(&mut self, x: Var, kernel: &Tensor, padding: Padding) -> Result<Var> {
        let ix = self.idx(x)?;
        let xs = self.nodes[ix].value.shape();
        let (h, w) = match xs {
            [h, w] => (*h, *w),
            _ => return Err(Error::ShapeMismatch { op: "conv2d", left: xs.to_vec(), right: kernel.shape().to_vec() }),
        };
        check_kernel(kernel, h, w, padding)?;
        let out = conv2d_forward(self.nodes[ix].value.data(), h, w, kernel, padding);
        let value = Tensor::new(vec![h, w], out)?;
        self.push("conv2d", value, Op::Conv2d { x: ix, kernel: kernel.clone(), padding }, &[ix])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = Tensor::scalar(self.nodes[ia].value.sum());
        self.push("sum", value, Op::Sum(ia), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = Tensor::scalar(self.nodes[ia].value.mean());
        self.push("mean", value, Op::Mean(ia), &[ia])
    }

    /// Squared Euclidean norm of all entries.
    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = Tensor::scalar(self.nodes[ia].value.norm_sq());
        self.push("sq_norm", value, Op::SqNorm(ia), &[ia])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f64::tanh);
        self.push("tanh", value, Op::Tanh(ia), &[ia])
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|v| v * sigmoid(v));
        self.push("silu", value, Op::Silu(ia), &[ia])
    }

    /// Select flat entries by index; the result is one-dimensional.
    pub fn gather(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let ia = self.idx(a)?;
        let src = self.nodes[ia].value.data();
        if idx.is_empty() {
            return Err(Error::InvalidArgument("gather with no indices".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= src.len()) {
            return Err(Error::InvalidArgument(format!("gather index {bad} out of range for {} entries", src.len())));
        }
        let value = Tensor::from_vec(idx.iter().map(|&i| src[i]).collect());
        self.push("gather", value, Op::Gather { x: ia, idx }, &[ia])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.clone().reshape(shape)?;
        self.push("reshape", value, Op::Reshape(ia), &[ia])
    }

    /// Apply a linear map whose backward pass is its adjoint.
    pub fn linear(&mut self, a: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = map.apply(&self.nodes[ia].value)?;
        self.push("linear", value, Op::Linear { x: ia, map }, &[ia])
    }

    /// Zero-pad an `[ih, iw]` input to the DFT grid, transform (orthonormal),
    /// and take elementwise magnitudes. The gradient is defined as 0 wherever a
    /// magnitude is exactly zero.
    pub fn dft_magnitude(&mut self, a: Var, dft: &Dft2) -> Result<Var> {
        let ia = self.idx(a)?;
        let xs = self.nodes[ia].value.shape();
        let (ih, iw) = match xs {
            [n] => (1, *n),
            [h, w] => (*h, *w),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "dft_magnitude",
                    left: xs.to_vec(),
                    right: vec![dft.height(), dft.width()],
                })
            }
        };
        if ih > dft.height() || iw > dft.width() {
            return Err(Error::ShapeMismatch {
                op: "dft_magnitude",
                left: xs.to_vec(),
                right: vec![dft.height(), dft.width()],
            });
        }
        let spectrum = dft.forward_padded(self.nodes[ia].value.data(), ih, iw);
        let value = Tensor::new(vec![dft.height() * dft.width()], spectrum.iter().map(|z| z.norm()).collect())?;
        self.push("dft_magnitude", value, Op::DftMagnitude { x: ia, dft: dft.clone(), spectrum, ih, iw }, &[ia])
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes strictly inside the
    /// interval and is 0 elsewhere, including at the boundary.
    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(|v| v.clamp(lo, hi));
        self.push("clip", value, Op::Clip { x: ia, lo, hi }, &[ia])
    }

    /// A unary node with an externally supplied value and vector-Jacobian
    /// product.
    pub fn custom(&mut self, name: &'static str, a: Var, value: Tensor, vjp: VjpFn) -> Result<Var> {
        let ia = self.idx(a)?;
        self.push(name, value, Op::Custom { x: ia, vjp }, &[ia])
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let io = self.idx(out)?;
        let root = &self.nodes[io].value;
        if !root.is_scalar() {
            return Err(Error::NotScalar(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=io).map(|_| None).collect();
        grads[io] = Some(Tensor::new(root.shape().to_vec(), vec![1.0])?);

        for i in (0..=io).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { graph: self.id, grads })
    }

    /// `d out / d wrt`, shaped like `wrt`.
    pub fn gradient(&self, out: Var, wrt: Var) -> Result<Tensor> {
        self.idx(wrt)?;
        self.backward(out)?.get(self, wrt)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate_broadcast(grads, *a, g.clone());
                self.accumulate_broadcast(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate_broadcast(grads, *a, g.clone());
                self.accumulate_broadcast(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let ga = broadcast_mul(g, vb);
                let gb = broadcast_mul(g, va);
                self.accumulate_broadcast(grads, *a, ga);
                self.accumulate_broadcast(grads, *b, gb);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if self.nodes[*a].tracked {
                    // dA = G B^T
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n, 1), val(*b).data(), (1, n), &mut ga);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                }
                if self.nodes[*b].tracked {
                    // dB = A^T G
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, val(*a).data(), (1, k), g.data(), (n, 1), &mut gb);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
                }
            }
            Op::Affine { x, w, b } => {
                let (m, k) = (val(*x).shape()[0], val(*x).shape()[1]);
                let n = val(*w).shape()[1];
                if self.nodes[*x].tracked {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n, 1), val(*w).data(), (1, n), &mut gx);
                    self.accumulate(grads, *x, Tensor::new(vec![m, k], gx)?);
                }
                if self.nodes[*w].tracked {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, val(*x).data(), (1, k), g.data(), (n, 1), &mut gw);
                    self.accumulate(grads, *w, Tensor::new(vec![k, n], gw)?);
                }
                if self.nodes[*b].tracked {
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let shape = val(*b).shape().to_vec();
                    self.accumulate(grads, *b, Tensor::new(shape, gb)?);
                }
            }
            Op::Conv2d { x, kernel, padding } => {
                let (h, w) = (val(*x).shape()[0], val(*x).shape()[1]);
                let gx = conv2d_adjoint(g.data(), h, w, kernel, *padding);
                self.accumulate(grads, *x, Tensor::new(vec![h, w], gx)?);
            }
            Op::Sum(a) => {
                let s = g.item();
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), s));
            }
            Op::Mean(a) => {
                let s = g.item() / val(*a).len() as f64;
                self.accumulate(grads, *a, Tensor::full(val(*a).shape(), s));
            }
            Op::SqNorm(a) => {
                let s = 2.0 * g.item();
                self.accumulate(grads, *a, val(*a).scale(s));
            }
            Op::Tanh(a) => {
                let ga = node.value.zip_map(g, |y, gy| gy * (1.0 - y * y))?;
                self.accumulate(grads, *a, ga);
            }
            Op::Silu(a) => {
                let ga = val(*a).zip_map(g, |x, gy| {
                    let s = sigmoid(x);
                    gy * s * (1.0 + x * (1.0 - s))
                })?;
                self.accumulate(grads, *a, ga);
            }
            Op::Gather { x, idx } => {
                let mut gx = Tensor::zeros_like(val(*x));
                let dst = gx.data_mut();
                for (&i, &v) in idx.iter().zip(g.data()) {
                    dst[i] += v;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(a) => {
                let ga = g.clone().reshape(val(*a).shape())?;
                self.accumulate(grads, *a, ga);
            }
            Op::Linear { x, map } => {
                let gx = map.adjoint(g)?.reshape(val(*x).shape())?;
                self.accumulate(grads, *x, gx);
            }
            Op::DftMagnitude { x, dft, spectrum, ih, iw } => {
                let weighted: Vec<Complex64> = spectrum
                    .iter()
                    .zip(g.data())
                    .map(|(z, &gy)| {
                        let r = z.norm();
                        if r == 0.0 {
                            Complex64::new(0.0, 0.0)
                        } else {
                            z * (gy / r)
                        }
                    })
                    .collect();
                let gx = dft.adjoint_padded(weighted, *ih, *iw);
                self.accumulate(grads, *x, Tensor::new(val(*x).shape().to_vec(), gx)?);
            }
            Op::Clip { x, lo, hi } => {
                let gx = val(*x).zip_map(g, |v, gy| if v > *lo && v < *hi { gy } else { 0.0 })?;
                self.accumulate(grads, *x, gx);
            }
            Op::Custom { x, vjp } => {
                let gx = vjp(g);
                if gx.len() != val(*x).len() {
                    return Err(Error::ShapeMismatch {
                        op: "custom vjp",
                        left: gx.shape().to_vec(),
                        right: val(*x).shape().to_vec(),
                    });
                }
                let gx = gx.reshape(val(*x).shape())?;
                self.accumulate(grads, *x, gx);
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        if !self.nodes[i].tracked {
            return;
        }
        match &mut grads[i] {
            Some(acc) => acc.axpy(1.0, &g).expect("gradient shape"),
            slot => *slot = Some(g),
        }
    }

    /// Accumulate a gradient computed at the output shape, summing it down if
    /// the operand was a broadcast scalar.
    fn accumulate_broadcast(&self, grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        let target = &self.nodes[i].value;
        if target.len() == g.len() {
            let g = g.reshape(target.shape()).expect("same length");
            self.accumulate(grads, i, g);
        } else {
            let s = Tensor::new(target.shape().to_vec(), vec![g.sum()]).expect("scalar");
            self.accumulate(grads, i, s);
        }
    }
}

/// Gradients of one backward pass.
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if `v` did not influence the output.
    pub fn get(&self, graph: &Graph, v: Var) -> Result<Tensor> {
        if v.graph != self.graph {
            return Err(Error::ForeignVariable);
        }
        let i = graph.idx(v)?;
        Ok(self.grads.get(i).and_then(|g| g.clone()).unwrap_or_else(|| Tensor::zeros_like(&graph.nodes[i].value)))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn broadcast_mul(g: &Tensor, other: &Tensor) -> Tensor {
    if g.len() == other.len() {
        g.zip_map(other, |a, b| a * b).expect("lengths checked")
    } else {
        g.scale(other.item())
    }
}

/// `c = a b` for row-major buffers with explicit (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    c.iter_mut().for_each(|v| *v = 0.0);
    gemm_acc(m, k, n, a, sa, b, sb, c);
}

/// `c += a b`.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() == m * n);
    // SAFETY: the asserts above bound every index dgemm touches, given
    // strides that describe an m x k (resp. k x n) view of the buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_kernel(kernel: &Tensor, h: usize, w: usize, padding: Padding) -> Result<()> {
    let (kh, kw) = match kernel.shape() {
        [kh, kw] => (*kh, *kw),
        s => return Err(Error::InvalidArgument(format!("convolution kernel must be 2-D, got shape {s:?}"))),
    };
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!("convolution kernel must have odd size, got {kh}x{kw}")));
    }
    if padding == Padding::Reflect && ((kh / 2 >= h && kh > 1) || (kw / 2 >= w && kw > 1)) {
        return Err(Error::InvalidArgument(format!(
            "reflect padding needs the image ({h}x{w}) larger than the kernel radius ({kh}x{kw})"
        )));
    }
    Ok(())
}

fn pad_index(i: isize, n: usize, padding: Padding) -> Option<usize> {
    let n = n as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match padding {
        Padding::Zero => None,
        Padding::Reflect => {
            let r = if i < 0 { -i } else { 2 * (n - 1) - i };
            Some(r as usize)
        }
    }
}

/// `y[i, j] = sum_{a, b} k[a, b] x[i - a + rh, j - b + rw]` (true convolution).
pub(crate) fn conv2d_forward(x: &[f64], h: usize, w: usize, kernel: &Tensor, padding: Padding) -> Vec<f64> {
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let k = kernel.data();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..kh {
                let Some(si) = pad_index(i as isize - a as isize + rh, h, padding) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(sj) = pad_index(j as isize - b as isize + rw, w, padding) else {
                        continue;
                    };
                    acc += k[a * kw + b] * x[si * w + sj];
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

/// Transpose of [`conv2d_forward`] under the same padding.
pub(crate) fn conv2d_adjoint(g: &[f64], h: usize, w: usize, kernel: &Tensor, padding: Padding) -> Vec<f64> {
    let (kh, kw) = (kernel.shape()[0], kernel.shape()[1]);
    let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
    let k = kernel.data();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let gij = g[i * w + j];
            for a in 0..kh {
                let Some(si) = pad_index(i as isize - a as isize + rh, h, padding) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(sj) = pad_index(j as isize - b as isize + rw, w, padding) else {
                        continue;
                    };
                    out[si * w + sj] += k[a * kw + b] * gij;
                }
            }
        }
    }
    out
}
