use super::{Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Tensor,
    pub numeric: Tensor,
    /// Largest per-coordinate relative error over non-ambiguous coordinates.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    /// Coordinates where the one-sided slopes differ by more than 1% of the
    /// gradient scale, i.e. a kink lies within one step. Reported, not scored.
    pub ambiguous: Vec<usize>,
    pub tol: f64,
    pub passed: bool,
}

/// Compare `d f / d x` from the tape against central finite differences.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)` where the
/// floor is `1e-3` times the largest gradient magnitude, so coordinates with
/// vanishing gradient are judged against the gradient's overall scale.
pub fn check_gradient<F>(f: F, at: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let mut g = Graph::new();
    let x = g.param(at.clone());
    let out = f(&mut g, x)?;
    let analytic = g.gradient(out, x)?;
    let f0 = g.value(out).item();

    let eval = |point: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(point);
        let out = f(&mut g, x)?;
        let v = g.value(out);
        if !v.is_scalar() {
            return Err(Error::NotScalar(v.shape().to_vec()));
        }
        Ok(v.item())
    };

    let mut numeric = Tensor::zeros_like(at);
    let mut jumps = vec![0.0; at.len()];
    for i in 0..at.len() {
        let mut plus = at.clone();
        plus.data_mut()[i] += step;
        let mut minus = at.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        numeric.data_mut()[i] = (fp - fm) / (2.0 * step);
        // Difference of the one-sided slopes: O(step) where f is smooth, the
        // size of the derivative jump where a kink lies within one step.
        jumps[i] = ((fp - f0) - (f0 - fm)).abs() / step;
    }

    let scale = analytic.max_abs().max(numeric.max_abs());
    let ambiguous: Vec<usize> = (0..at.len()).filter(|&i| scale > 0.0 && jumps[i] > 1e-2 * scale).collect();

    let floor = (1e-3 * scale).max(1e-300);
    let mut max_rel_error = 0.0;
    let mut worst_index = None;
    for i in 0..at.len() {
        if ambiguous.contains(&i) {
            continue;
        }
        let (a, n) = (analytic.data()[i], numeric.data()[i]);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > max_rel_error || worst_index.is_none() {
            max_rel_error = rel;
            worst_index = Some(i);
        }
    }
    Ok(GradCheckReport { passed: max_rel_error < tol, analytic, numeric, max_rel_error, worst_index, ambiguous, tol })
}
