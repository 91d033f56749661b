use crate::error::{invalid, Result};

/// Discrete variance-preserving schedule with `T` steps.
///
/// Arrays are indexed by schedule time `t` in `0..=T`; index 0 is the clean
/// signal (`alpha_bar(0) = 1`, `beta(0) = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_min` (at `t = 1`) to `beta_max` (at `t = T`).
    pub fn linear(t_max: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(invalid(format!("need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")));
        }
        let betas = (1..=t_max)
            .map(|t| {
                if t_max == 1 {
                    beta_min
                } else {
                    beta_min + (t - 1) as f64 * (beta_max - beta_min) / (t_max - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// The conventional DDPM schedule: `T = 1000`, betas in `[1e-4, 0.02]`.
    pub fn ddpm_default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid defaults")
    }

    /// Schedule from explicit `beta_1..beta_T`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("schedule needs at least one step"));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(invalid(format!("every beta must lie in (0, 1), got {b}")));
        }
        let mut beta = Vec::with_capacity(betas.len() + 1);
        beta.push(0.0);
        beta.extend(betas);
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        alpha_bar.push(1.0);
        for a in &alpha[1..] {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    /// Total number of training steps `T`.
    pub fn t_max(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Noise-to-signal ratio `sqrt((1 - abar) / abar)`, i.e. the noise level of
    /// `x_t / sqrt(abar_t)`.
    pub fn sigma(&self, t: usize) -> f64 {
        let ab = self.alpha_bar[t];
        ((1.0 - ab) / ab).sqrt()
    }

    /// Schedule index whose [`sigma`](Self::sigma) is closest to `sigma`.
    pub fn nearest_index(&self, sigma: f64) -> usize {
        // sigma is increasing in t.
        let t_max = self.t_max();
        let (mut lo, mut hi) = (0, t_max + 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.sigma(mid) < sigma {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let pos = lo;
        if pos == 0 {
            return 0;
        }
        if pos > t_max {
            return t_max;
        }
        if (self.sigma(pos) - sigma).abs() < (sigma - self.sigma(pos - 1)).abs() {
            pos
        } else {
            pos - 1
        }
    }

    /// Sampler time grid: `t_i = i * floor(T / N)` for `i = 0..=N`. Steps
    /// beyond `N * floor(T / N)` are dropped at the high-noise end.
    pub fn sampler_times(&self, n_steps: usize) -> Result<Vec<usize>> {
        if n_steps == 0 {
            return Err(invalid("need at least one sampling step"));
        }
        let dt = self.t_max() / n_steps;
        if dt == 0 {
            return Err(invalid(format!("{n_steps} sampling steps exceed the {} schedule steps", self.t_max())));
        }
        Ok((0..=n_steps).map(|i| i * dt).collect())
    }
}
