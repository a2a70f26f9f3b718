//! Tensors, seeded random streams and isotropic Gaussians.

pub mod gaussian;
pub mod rng;
pub mod tensor;

pub use gaussian::{kl_isotropic_gaussians, GaussianParams};
pub use rng::{gaussian_sample, RngState};
pub use tensor::DenseTensor;
