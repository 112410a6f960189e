//! Bayesian image reconstruction for limited-projection parallel-beam CT
//! with a hybrid nonlocal-TV + Gaussian (NLTG) prior.
//!
//! The pieces, bottom to top:
//!
//! * [`image`] — raster container, synthetic phantoms, noise injection,
//!   intensity clipping.
//! * [`radon`] — discrete Radon transform (Joseph ray model), its exact
//!   adjoint, detector masking, and an FBP baseline.
//! * [`nonlocal`] — patch-similarity weight graph and the nonlocal
//!   gradient / divergence / Laplacian / NLTV seminorm built on it.
//! * [`gauss`] — reference-driven sparse Gaussian covariance with a band
//!   Cholesky factor serving both precision solves and sampling.
//! * [`map`] — MAP estimation by split Bregman with a matrix-free CG inner
//!   solver; degenerate configurations give the TV/TG/NLTV baselines.
//! * [`pcn`] — preconditioned Crank-Nicolson sampling of the posterior and
//!   streaming chain statistics (CM image, variance, CI maps).
//! * [`metrics`] — PSNR and SSIM.
//!
//! Everything is deterministic: all randomness flows from caller-provided
//! seeds through counter-based generators, and all reductions run in fixed
//! index order. The crate is `no_std` (with `alloc`); file formats and
//! orchestration live in the companion `nltg-cli` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod math;

pub mod error;
pub mod gauss;
pub mod image;
pub mod map;
pub mod metrics;
pub mod nonlocal;
pub mod pcn;
pub mod radon;

pub use error::{Error, Result};
pub use image::Image;
