use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::rng::RngState;
use crate::numerics::tensor::DenseTensor;

/// Isotropic Gaussian `N(mean, variance · I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: DenseTensor,
    variance: f64,
}

impl GaussianParams {
    pub fn new(mean: DenseTensor, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::OutOfRange {
                name: "variance",
                value: variance,
                range: "(0, inf)",
            });
        }
        Ok(Self { mean, variance })
    }

    pub fn mean(&self) -> &DenseTensor {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &DenseTensor) -> Result<f64> {
        let sq = x.sub(&self.mean)?.norm_sq();
        let d = self.dim() as f64;
        Ok(-0.5 * d * (2.0 * PI * self.variance).ln() - 0.5 * sq / self.variance)
    }

    pub fn sample(&self, rng: &mut RngState) -> Result<DenseTensor> {
        let sd = self.variance.sqrt();
        let data = self
            .mean
            .data()
            .iter()
            .map(|m| m + sd * rng.normal())
            .collect();
        DenseTensor::new(self.mean.shape().to_vec(), data)
    }
}

/// `KL(p ‖ q)` for isotropic Gaussians:
/// `‖μp − μq‖² / (2σq²) + (D/2)(σp²/σq² − 1 + ln(σq²/σp²))`.
pub fn kl_isotropic_gaussians(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    let mean_sq = p.mean.sub(&q.mean)?.norm_sq();
    let d = p.dim() as f64;
    let ratio = p.variance / q.variance;
    let kl = 0.5 * mean_sq / q.variance + 0.5 * d * (ratio - 1.0 - ratio.ln());
    // ratio - 1 - ln(ratio) >= 0 analytically; clamp rounding noise at ratio ≈ 1.
    Ok(kl.max(0.0))
}
