use std::sync::Arc;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::ForwardOperator;
use crate::error::{invalid, Result};
use crate::rng::{normal_tensor, stream, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseModel {
    Gaussian,
    /// Counts with rate `lambda_y (A(x) + o) / 2`, mapped back by
    /// `2 k / lambda_y - o`. The offset `o` is 1 for measurements in
    /// `[-1, inf)` and `-min A(x)` otherwise, so rates are never negative.
    Poisson {
        lambda_y: f64,
    },
}

/// A measured inverse problem.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub x_true: Option<Tensor>,
    pub y: Tensor,
    /// Gaussian: the configured standard deviation. Poisson: the realised
    /// root-mean-square deviation of `y` from `A(x)`.
    pub sigma_y: f64,
    pub noise: NoiseModel,
    pub operator: Arc<dyn ForwardOperator>,
    pub seed: u64,
    /// Shift applied before Poisson sampling (`None` for Gaussian noise).
    pub poisson_offset: Option<f64>,
}

impl ProblemInstance {
    /// A problem with given measurements and no known ground truth.
    pub fn from_measurements(y: Tensor, sigma_y: f64, operator: Arc<dyn ForwardOperator>) -> Result<Self> {
        super::check_measurement(operator.as_ref(), &y)?;
        Ok(Self { x_true: None, y, sigma_y, noise: NoiseModel::Gaussian, operator, seed: 0, poisson_offset: None })
    }

    pub fn signal_shape(&self) -> &[usize] {
        self.operator.input_shape()
    }

    pub fn m(&self) -> usize {
        self.operator.m()
    }
}

/// `y = A(x) + noise`, with noise drawn from the measurement stream of
/// `seed`.
pub fn synthesize_measurements(
    x_true: &Tensor,
    operator: Arc<dyn ForwardOperator>,
    sigma_y: f64,
    noise: NoiseModel,
    seed: u64,
) -> Result<ProblemInstance> {
    if !(sigma_y >= 0.0) {
        return Err(invalid(format!("sigma_y must be non-negative, got {sigma_y}")));
    }
    let clean = operator.apply(x_true)?;
    let mut rng = stream(seed, Stream::Measurement);
    let (y, sigma, offset) = match noise {
        NoiseModel::Gaussian => {
            let y = if sigma_y == 0.0 {
                clean.clone()
            } else {
                let mut y = clean.clone();
                y.axpy(sigma_y, &normal_tensor(&[clean.len()], &mut rng))?;
                y
            };
            (y, sigma_y, None)
        }
        NoiseModel::Poisson { lambda_y } => {
            if !(lambda_y > 0.0) {
                return Err(invalid(format!("Poisson rate must be positive, got {lambda_y}")));
            }
            let min = clean.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let offset = if min < -1.0 { -min } else { 1.0 };
            let mut data = Vec::with_capacity(clean.len());
            for &a in clean.data() {
                let rate = lambda_y * (a + offset) / 2.0;
                let k = if rate > 0.0 {
                    Poisson::new(rate).map_err(|e| invalid(e.to_string()))?.sample(&mut rng)
                } else {
                    0.0
                };
                data.push(2.0 * k / lambda_y - offset);
            }
            let y = Tensor::new(clean.shape().to_vec(), data)?;
            let rms = (y.sub(&clean)?.norm_sq() / y.len() as f64).sqrt();
            (y, rms, Some(offset))
        }
    };
    Ok(ProblemInstance {
        x_true: Some(x_true.clone()),
        y,
        sigma_y: sigma,
        noise,
        operator,
        seed,
        poisson_offset: offset,
    })
}
