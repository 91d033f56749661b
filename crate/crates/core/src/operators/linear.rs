use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_measurement, check_signal, graph_input, ForwardOperator};
use crate::autodiff::{conv2d_adjoint, conv2d_forward, Graph, LinearMap, Padding, Var};
use crate::error::{invalid, Result};
use crate::fft::Dft2;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

fn image_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [h, w] if *h > 0 && *w > 0 => Ok((*h, *w)),
        s => Err(invalid(format!("expected an image shape [h, w], got {s:?}"))),
    }
}

/// Keeps a fixed subset of entries (pixel masking). The adjoint scatters the
/// kept values back and fills the rest with zeros.
#[derive(Debug, Clone)]
pub struct Mask {
    name: String,
    shape: Vec<usize>,
    keep: Arc<[usize]>,
}

impl Mask {
    /// Keep the listed flat indices, which must be strictly increasing.
    pub fn from_indices(name: &str, shape: &[usize], keep: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if keep.is_empty() {
            return Err(invalid("mask keeps no entries"));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || keep.last().is_some_and(|&k| k >= n) {
            return Err(invalid("mask indices must be increasing and inside the signal"));
        }
        Ok(Self { name: name.to_string(), shape: shape.to_vec(), keep: keep.into() })
    }

    pub fn identity(shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_indices("identity", shape, (0..n).collect())
    }

    /// Hide the `height x width` box whose top-left corner is `(top, left)`.
    pub fn boxed(shape: &[usize], top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        let (h, w) = image_dims(shape)?;
        if top + height > h || left + width > w {
            return Err(invalid(format!("box {height}x{width} at ({top}, {left}) does not fit in a {h}x{w} image")));
        }
        let inside = |r: usize, c: usize| r >= top && r < top + height && c >= left && c < left + width;
        let keep = (0..h * w).filter(|&i| !inside(i / w, i % w)).collect();
        Self::from_indices("box-mask", shape, keep)
    }

    /// Keep each entry independently with probability `keep_prob`.
    pub fn random(shape: &[usize], keep_prob: f64, seed: u64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(invalid(format!("keep probability must lie in (0, 1], got {keep_prob}")));
        }
        let n: usize = shape.iter().product();
        let mut rng = stream(seed, Stream::Operator);
        let keep: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < keep_prob).collect();
        if keep.is_empty() {
            return Err(invalid("random mask kept no entries; raise the keep probability"));
        }
        Self::from_indices("random-mask", shape, keep)
    }

    /// Keep exactly `m` entries chosen uniformly without replacement.
    pub fn random_count(shape: &[usize], m: usize, seed: u64) -> Result<Self> {
        let n: usize = shape.iter().product();
        if m == 0 || m > n {
            return Err(invalid(format!("cannot keep {m} of {n} entries")));
        }
        let mut rng = stream(seed, Stream::Operator);
        let mut keep = index::sample(&mut rng, n, m).into_vec();
        keep.sort_unstable();
        Self::from_indices("random-mask", shape, keep)
    }

    pub fn kept(&self) -> &[usize] {
        &self.keep
    }
}

impl ForwardOperator for Mask {
    fn name(&self) -> &str {
        &self.name
    }

    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn m(&self) -> usize {
        self.keep.len()
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let x = check_signal(self, x)?;
        Ok(Tensor::from_vec(self.keep.iter().map(|&i| x.data()[i]).collect()))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check_measurement(self, y)?;
        let mut out = Tensor::zeros(&self.shape);
        for (&i, v) in self.keep.iter().zip(y.data()) {
            out.data_mut()[i] = *v;
        }
        Ok(out)
    }

    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let flat = g.reshape(x, &[self.n()])?;
        g.gather(flat, Arc::clone(&self.keep))
    }
}

/// Normalized `size x size` Gaussian kernel.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Tensor> {
    anisotropic_kernel(size, sigma, sigma, 0.0)
}

/// Seeded anisotropic Gaussian used as a stand-in for a motion-blur kernel:
/// a long axis of `size / 4` and a short axis of `0.5` pixels at a random
/// orientation.
pub fn motion_kernel(size: usize, seed: u64) -> Result<Tensor> {
    let mut rng = stream(seed, Stream::Operator);
    let angle = rng.random_range(0.0..PI);
    anisotropic_kernel(size, size as f64 / 4.0, 0.5, angle)
}

fn anisotropic_kernel(size: usize, major: f64, minor: f64, angle: f64) -> Result<Tensor> {
    if size.is_multiple_of(2) {
        return Err(invalid(format!("blur kernel size must be odd, got {size}")));
    }
    if !(major > 0.0 && minor > 0.0) {
        return Err(invalid("blur widths must be positive"));
    }
    let r = (size / 2) as f64;
    let (c, s) = (angle.cos(), angle.sin());
    let mut data: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - r, (i % size) as f64 - r);
            let (u, v) = (c * x + s * y, -s * x + c * y);
            (-0.5 * (u * u / (major * major) + v * v / (minor * minor))).exp()
        })
        .collect();
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    Tensor::new(vec![size, size], data)
}

/// Convolution with a normalized odd-sized kernel under reflect padding.
#[derive(Debug, Clone)]
pub struct Blur {
    shape: Vec<usize>,
    kernel: Tensor,
}

impl Blur {
    pub fn new(shape: &[usize], kernel: Tensor) -> Result<Self> {
        let (h, w) = image_dims(shape)?;
        let (kh, kw) = image_dims(kernel.shape()).map_err(|_| invalid("blur kernel must be 2-D"))?;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(invalid(format!("blur kernel must have odd size, got {kh}x{kw}")));
        }
        if (kernel.sum() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("blur kernel must sum to 1, got {}", kernel.sum())));
        }
        if (kh > 1 && kh / 2 >= h) || (kw > 1 && kw / 2 >= w) {
            return Err(invalid(format!("{kh}x{kw} kernel is too large for a {h}x{w} image")));
        }
        Ok(Self { shape: shape.to_vec(), kernel })
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }
}

impl ForwardOperator for Blur {
    fn name(&self) -> &str {
        "blur"
    }

    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn m(&self) -> usize {
        self.n()
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let x = check_signal(self, x)?;
        let (h, w) = (self.shape[0], self.shape[1]);
        Ok(Tensor::from_vec(conv2d_forward(x.data(), h, w, &self.kernel, Padding::Reflect)))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check_measurement(self, y)?;
        let (h, w) = (self.shape[0], self.shape[1]);
        Tensor::new(self.shape.clone(), conv2d_adjoint(y.data(), h, w, &self.kernel, Padding::Reflect))
    }

    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let x = graph_input(self, g, x)?;
        let y = g.conv2d(x, &self.kernel, Padding::Reflect)?;
        g.reshape(y, &[self.n()])
    }
}

#[derive(Debug)]
struct BlockAverage {
    h: usize,
    w: usize,
    factor: usize,
}

impl LinearMap for BlockAverage {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.factor;
        let (oh, ow) = (self.h / f, self.w / f);
        let scale = 1.0 / (f * f) as f64;
        let mut out = vec![0.0; oh * ow];
        for r in 0..self.h {
            for c in 0..self.w {
                out[(r / f) * ow + c / f] += x.data()[r * self.w + c] * scale;
            }
        }
        Ok(Tensor::from_vec(out))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let f = self.factor;
        let ow = self.w / f;
        let scale = 1.0 / (f * f) as f64;
        let data = (0..self.h * self.w).map(|i| y.data()[(i / self.w / f) * ow + (i % self.w) / f] * scale).collect();
        Tensor::new(vec![self.h, self.w], data)
    }
}

/// Block-average pooling by an integer factor.
#[derive(Debug, Clone)]
pub struct Downsample {
    shape: Vec<usize>,
    map: Arc<BlockAverage>,
}

impl Downsample {
    pub fn new(shape: &[usize], factor: usize) -> Result<Self> {
        let (h, w) = image_dims(shape)?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(invalid(format!("{h}x{w} image is not divisible by factor {factor}")));
        }
        Ok(Self { shape: shape.to_vec(), map: Arc::new(BlockAverage { h, w, factor }) })
    }
}

impl ForwardOperator for Downsample {
    fn name(&self) -> &str {
        "downsample"
    }

    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn m(&self) -> usize {
        self.n() / (self.map.factor * self.map.factor)
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.map.apply(&check_signal(self, x)?)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check_measurement(self, y)?;
        self.map.adjoint(y)
    }

    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let x = graph_input(self, g, x)?;
        g.linear(x, self.map.clone())
    }
}

/// Which k-space rows a [`FourierMask`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowPattern {
    Full,
    /// Every `acceleration`-th row starting from the zero frequency.
    UniformRows,
    /// `h / acceleration` distinct rows drawn with probability decaying as a
    /// Gaussian in frequency distance; the zero-frequency row is always kept.
    GaussianRows,
}

#[derive(Debug)]
struct RowSampledDft {
    h: usize,
    w: usize,
    rows: Vec<usize>,
    dft: Dft2,
}

impl LinearMap for RowSampledDft {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let spec = self.dft.forward_padded(x.data(), self.h, self.w);
        let mut out = Vec::with_capacity(2 * self.rows.len() * self.w);
        for &r in &self.rows {
            for z in &spec[r * self.w..(r + 1) * self.w] {
                out.push(z.re);
                out.push(z.im);
            }
        }
        Ok(Tensor::from_vec(out))
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let mut spec = vec![Complex64::new(0.0, 0.0); self.h * self.w];
        for (k, &r) in self.rows.iter().enumerate() {
            for c in 0..self.w {
                let j = 2 * (k * self.w + c);
                spec[r * self.w + c] = Complex64::new(y.data()[j], y.data()[j + 1]);
            }
        }
        Tensor::new(vec![self.h, self.w], self.dft.adjoint_padded(spec, self.h, self.w))
    }
}

/// Orthonormal 2-D DFT restricted to a set of rows; the complex values are
/// interleaved as `re, im`, so `m = 2 * rows * w`.
#[derive(Debug, Clone)]
pub struct FourierMask {
    shape: Vec<usize>,
    map: Arc<RowSampledDft>,
}

impl FourierMask {
    pub fn new(shape: &[usize], pattern: RowPattern, acceleration: usize, seed: u64) -> Result<Self> {
        let (h, w) = image_dims(shape)?;
        if acceleration == 0 {
            return Err(invalid("acceleration must be at least 1"));
        }
        let rows: Vec<usize> = match pattern {
            RowPattern::Full => (0..h).collect(),
            RowPattern::UniformRows => (0..h).step_by(acceleration).collect(),
            RowPattern::GaussianRows => {
                let count = h / acceleration;
                let mut rng = stream(seed, Stream::Operator);
                let width = h as f64 / 4.0;
                let mut weight: Vec<f64> = (0..h)
                    .map(|r| {
                        let d = r.min(h - r) as f64;
                        (-0.5 * d * d / (width * width)).exp()
                    })
                    .collect();
                let mut rows = Vec::new();
                if count > 0 {
                    rows.push(0);
                    weight[0] = 0.0;
                }
                while rows.len() < count {
                    let total: f64 = weight.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = h - 1;
                    for (r, wt) in weight.iter().enumerate() {
                        if *wt > 0.0 && u < *wt {
                            pick = r;
                            break;
                        }
                        u -= wt;
                    }
                    if weight[pick] == 0.0 {
                        pick = weight.iter().rposition(|v| *v > 0.0).expect("rows remain");
                    }
                    weight[pick] = 0.0;
                    rows.push(pick);
                }
                rows.sort_unstable();
                rows
            }
        };
        if rows.is_empty() {
            return Err(invalid("Fourier mask keeps no rows"));
        }
        Ok(Self { shape: shape.to_vec(), map: Arc::new(RowSampledDft { h, w, rows, dft: Dft2::new(h, w) }) })
    }

    pub fn rows(&self) -> &[usize] {
        &self.map.rows
    }
}

impl ForwardOperator for FourierMask {
    fn name(&self) -> &str {
        "fourier-mask"
    }

    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn m(&self) -> usize {
        2 * self.map.rows.len() * self.map.w
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.map.apply(&check_signal(self, x)?)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        check_measurement(self, y)?;
        self.map.adjoint(y)
    }

    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let x = graph_input(self, g, x)?;
        g.linear(x, self.map.clone())
    }
}
