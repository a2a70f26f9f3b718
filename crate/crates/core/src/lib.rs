//! Bilateral denoising diffusion at desk scale: diffusion kernels, the
//! score and scheduling objectives, two-phase noise scheduling, and
//! estimators that check the lower-bound identities numerically.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over several parallel arrays read better than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod nn;
pub mod noise_scheduling;
pub mod numerics;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{gaussian_sample, kl_isotropic_gaussians, DenseTensor, GaussianParams, RngState};
