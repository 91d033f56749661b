use super::{check_signal, graph_input, ForwardOperator};
use crate::autodiff::{Graph, Var};
use crate::error::{invalid, Result};
use crate::fft::Dft2;
use crate::tensor::Tensor;

/// Magnitudes of the orthonormal DFT of the zero-padded signal.
///
/// A dimension of size 1 stays 1; any other dimension `d` is padded to
/// `ceil(oversample * d)`.
#[derive(Debug, Clone)]
pub struct PhaseRetrieval {
    shape: Vec<usize>,
    dft: Dft2,
}

impl PhaseRetrieval {
    pub fn new(shape: &[usize], oversample: f64) -> Result<Self> {
        if !(oversample >= 1.0) {
            return Err(invalid(format!("oversampling must be at least 1, got {oversample}")));
        }
        let (h, w) = match shape {
            [n] => (1, *n),
            [h, w] => (*h, *w),
            s => return Err(invalid(format!("phase retrieval needs a 1-D or 2-D signal, got {s:?}"))),
        };
        let pad = |d: usize| {
            if d == 1 {
                1
            } else {
                (oversample * d as f64).ceil() as usize
            }
        };
        Ok(Self { shape: shape.to_vec(), dft: Dft2::new(pad(h), pad(w)) })
    }

    pub fn padded_shape(&self) -> [usize; 2] {
        [self.dft.height(), self.dft.width()]
    }
}

impl ForwardOperator for PhaseRetrieval {
    fn name(&self) -> &str {
        "phase-retrieval"
    }

    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn m(&self) -> usize {
        self.dft.height() * self.dft.width()
    }

    fn is_linear(&self) -> bool {
        false
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let x = check_signal(self, x)?;
        let (ih, iw) = match self.shape.as_slice() {
            [n] => (1, *n),
            s => (s[0], s[1]),
        };
        let spec = self.dft.forward_padded(x.data(), ih, iw);
        Ok(Tensor::from_vec(spec.iter().map(|z| z.norm()).collect()))
    }

    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let x = graph_input(self, g, x)?;
        g.dft_magnitude(x, &self.dft)
    }
}

/// `y = clip(factor * x, -1, 1)`.
#[derive(Debug, Clone)]
pub struct DynamicRangeClip {
    shape: Vec<usize>,
    factor: f64,
}

impl DynamicRangeClip {
    pub fn new(shape: &[usize], factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(invalid(format!("dynamic-range factor must be positive, got {factor}")));
        }
        Ok(Self { shape: shape.to_vec(), factor })
    }
}

impl ForwardOperator for DynamicRangeClip {
    fn name(&self) -> &str {
        "hdr-clip"
    }

    fn input_shape(&self) -> &[usize] {
        &self.shape
    }

    fn m(&self) -> usize {
        self.n()
    }

    fn is_linear(&self) -> bool {
        false
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let x = check_signal(self, x)?;
        Ok(Tensor::from_vec(x.data().iter().map(|v| (self.factor * v).clamp(-1.0, 1.0)).collect()))
    }

    fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let flat = g.reshape(x, &[self.n()])?;
        let s = g.scale(flat, self.factor)?;
        g.clip(s, -1.0, 1.0)
    }
}
