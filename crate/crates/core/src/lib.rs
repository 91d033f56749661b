//! Step-wise triple-consistent diffusion sampling for inverse problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: a small reverse-mode tape over dense [`Tensor`]s, enough to
//!   differentiate through a noise-prediction network with respect to its
//!   input (sampling) or its weights (training).
//! - [`diffusion`]: the variance-preserving noise schedule, forward diffusion,
//!   Tweedie denoising, reverse steps, probability-flow ODE refinement and
//!   denoising score matching.
//! - [`score`]: noise predictors, both a trainable MLP and closed-form
//!   Gaussian-mixture oracles.
//! - [`operators`]: measurement operators `A(x)` with adjoints, plus
//!   measurement synthesis.
//! - [`optim`]: Adam and plain gradient descent.
//! - [`samplers`]: the triple-consistent sampler and its baselines.
//! - [`metrics`]: PSNR, SSIM, residual norms.
//! - [`harness`]: JSON-configured experiments, sweeps and CSV/PGM output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod diffusion;
pub mod error;
pub mod fft;
pub mod harness;
pub mod metrics;
pub mod operators;
pub mod optim;
pub mod rng;
pub mod samplers;
pub mod score;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
