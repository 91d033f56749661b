//! Orthonormal 2-D discrete Fourier transforms on small row-major grids.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Cached forward/inverse plans for an `h x w` grid. Both directions are
/// scaled by `1/sqrt(h*w)`, so the inverse is the adjoint.
#[derive(Clone)]
pub struct Dft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dft2({}x{})", self.h, self.w)
    }
}

impl Dft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, true);
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let (h, w) = (self.h, self.w);
        assert_eq!(buf.len(), h * w);
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        for r in buf.chunks_exact_mut(w) {
            row.process(r);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
        let s = 1.0 / ((h * w) as f64).sqrt();
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// Embed a real `ih x iw` image in the top-left corner of the grid and
    /// transform it.
    pub fn forward_padded(&self, x: &[f64], ih: usize, iw: usize) -> Vec<Complex64> {
        assert!(ih <= self.h && iw <= self.w && x.len() == ih * iw);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.h * self.w];
        for r in 0..ih {
            for c in 0..iw {
                buf[r * self.w + c] = Complex64::new(x[r * iw + c], 0.0);
            }
        }
        self.forward(&mut buf);
        buf
    }

    /// Adjoint of [`Dft2::forward_padded`] followed by taking the real part.
    pub fn adjoint_padded(&self, mut spectrum: Vec<Complex64>, ih: usize, iw: usize) -> Vec<f64> {
        self.inverse(&mut spectrum);
        let mut out = vec![0.0; ih * iw];
        for r in 0..ih {
            for c in 0..iw {
                out[r * iw + c] = spectrum[r * self.w + c].re;
            }
        }
        out
    }
}
