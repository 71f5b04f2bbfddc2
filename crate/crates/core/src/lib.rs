//! Frequency-separated, noise-conditioned normalizing flow for stochastic
//! single-image super-resolution.
//!
//! The model never sees the low-frequency part of the HR target. The target
//! is split with a bicubic down/up filter pair into `L_s(x)` (recoverable from
//! the LR input) and the residual `H_s(x) = x - L_s(x)`; a conditional flow
//! learns the residual by exact likelihood, with Gaussian noise injected on
//! both the residual and the LR input and the noise fed back as a condition.
//!
//! Module map:
//!
//! * [`numerics`] - tensors, reverse-mode gradients, finite-difference checks, Adam.
//! * [`imagecore`] - images, bicubic resampling, the low/high-pass split, PNG and FSHF I/O.
//! * [`flow`] - the invertible model, its layers, NLL and checkpoints.
//! * [`noisecond`] - noise schedule and condition construction.
//! * [`train`] - dataset sampling, augmentation and the training loop.
//! * [`sampler`] - temperature sampling with low-frequency add-back.
//! * [`metrics`] - diversity score, LR-PSNR, sparsity and report writing.

pub mod error;
pub mod flow;
pub mod imagecore;
pub mod io;
pub mod metrics;
pub mod noisecond;
pub mod numerics;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
