//! Sparse-view cone-beam CT (CBCT) simulation and reconstruction toolkit.
//!
//! The crate covers the full desk-scale workflow:
//!
//! - [`phantom`]: procedural double-shell objects (gas core, perturbed metal
//!   shell) used as ground truth,
//! - [`geometry`]: cone-beam forward projector, its exact adjoint, and
//!   FDK filtered back projection with Hann apodization,
//! - [`corruption`]: radiograph degradation physics (source/detector blur,
//!   correlated and background scatter, colored Poisson noise, AWGN),
//! - [`recon`]: TV-regularized least squares with automated weight search,
//!   plus SNR/SSIM evaluation metrics,
//! - [`tensor`]: a small reverse-mode autodiff engine (2D convolution, ReLU,
//!   axis permutation) with an Adam optimizer,
//! - [`swapnet`]: the 2.5D residual network whose channel axis cycles
//!   through x, y, z between blocks,
//! - [`pipeline`]: dataset construction, supervised training, evaluation
//!   tables, ablations, and on-disk formats.

pub mod corruption;
pub mod error;
pub(crate) mod filters;
pub mod geometry;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod swapnet;
pub mod tensor;

pub use error::{Error, Result};
