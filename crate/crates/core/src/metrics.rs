//! Reconstruction quality and measurement residuals.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operators::ProblemInstance;
use crate::tensor::Tensor;

/// Signals live in `[-1, 1]`, so the default PSNR peak is the range width.
pub const DEFAULT_PEAK: f64 = 2.0;
/// Value reported when the mean squared error is exactly zero.
pub const PSNR_CAP: f64 = 200.0;
/// Side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub mse: f64,
    pub residual_norm: f64,
    pub runtime_seconds: f64,
    pub peak: f64,
}

fn same_shape(op: &'static str, x: &Tensor, r: &Tensor) -> Result<()> {
    if x.shape() != r.shape() {
        return Err(Error::ShapeMismatch { op, left: x.shape().to_vec(), right: r.shape().to_vec() });
    }
    Ok(())
}

pub fn mse(x: &Tensor, reference: &Tensor) -> Result<f64> {
    same_shape("mse", x, reference)?;
    Ok(x.sub(reference)?.norm_sq() / x.len() as f64)
}

/// `10 log10(peak^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    let m = mse(x, reference)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP))
}

/// Box sums over every `window x window` patch via a summed-area table.
fn window_sums(v: &[f64], h: usize, w: usize, window: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut sat = vec![0.0; (h + 1) * stride];
    for r in 0..h {
        let mut row = 0.0;
        for c in 0..w {
            row += v[r * w + c];
            sat[(r + 1) * stride + c + 1] = sat[r * stride + c + 1] + row;
        }
    }
    let (oh, ow) = (h - window + 1, w - window + 1);
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let (r1, c1) = (r + window, c + window);
            out.push(sat[r1 * stride + c1] - sat[r * stride + c1] - sat[r1 * stride + c] + sat[r * stride + c]);
        }
    }
    out
}

/// Mean structural similarity over all fully contained `window x window`
/// patches, with uniform weights, population statistics and
/// `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
pub fn ssim(x: &Tensor, reference: &Tensor, window: usize, peak: f64) -> Result<f64> {
    same_shape("ssim", x, reference)?;
    let (h, w) = match x.shape() {
        [h, w] => (*h, *w),
        s => return Err(invalid(format!("SSIM needs a 2-D image, got shape {s:?}"))),
    };
    if window == 0 || window.is_multiple_of(2) {
        return Err(invalid(format!("SSIM window must be odd, got {window}")));
    }
    if h < window || w < window {
        return Err(invalid(format!("image {h}x{w} is smaller than the {window}x{window} window")));
    }
    let (a, b) = (x.data(), reference.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(p, q)| f(*p, *q)).collect::<Vec<_>>();
    let sx = window_sums(a, h, w, window);
    let sy = window_sums(b, h, w, window);
    let sxx = window_sums(&prod(&|p, _| p * p), h, w, window);
    let syy = window_sums(&prod(&|_, q| q * q), h, w, window);
    let sxy = window_sums(&prod(&|p, q| p * q), h, w, window);
    let n = (window * window) as f64;
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut total = 0.0;
    for i in 0..sx.len() {
        let (mx, my) = (sx[i] / n, sy[i] / n);
        let vx = sxx[i] / n - mx * mx;
        let vy = syy[i] / n - my * my;
        let cxy = sxy[i] / n - mx * my;
        total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / sx.len() as f64)
}

/// `||A(x) - y||_2`.
pub fn residual_norm(problem: &ProblemInstance, x: &Tensor) -> Result<f64> {
    Ok(problem.operator.apply(x)?.sub(&problem.y)?.norm())
}

/// Full report for a reconstruction; SSIM is `None` when the image is not
/// 2-D or is smaller than the window.
pub fn report(problem: &ProblemInstance, x: &Tensor, runtime_seconds: f64) -> Result<MetricReport> {
    let residual = residual_norm(problem, x)?;
    let (p, s, m) = match &problem.x_true {
        Some(truth) => {
            let s = match truth.shape() {
                [h, w] if *h >= SSIM_WINDOW && *w >= SSIM_WINDOW => Some(ssim(x, truth, SSIM_WINDOW, DEFAULT_PEAK)?),
                _ => None,
            };
            (psnr(x, truth, DEFAULT_PEAK)?, s, mse(x, truth)?)
        }
        None => (f64::NAN, None, f64::NAN),
    };
    Ok(MetricReport { psnr: p, ssim: s, mse: m, residual_norm: residual, runtime_seconds, peak: DEFAULT_PEAK })
}
