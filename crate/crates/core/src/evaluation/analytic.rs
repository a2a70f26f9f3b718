//! Closed-form optimal noise predictors for Gaussian and Gaussian-mixture
//! data, `ε*(x_t, α) = E[ε | x_t]`.

use crate::error::{Error, Result};
use crate::nn::EpsModel;
use crate::numerics::DenseTensor;

/// Optimal predictor for isotropic Gaussian data `N(μ0, s0² I)`:
/// `√(1 − α²) (x − α μ0) / (α² s0² + 1 − α²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScoreModel {
    mean: Vec<f64>,
    scale: f64,
}

impl AnalyticScoreModel {
    pub fn new(mean: Vec<f64>, scale: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::EmptyShape);
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::OutOfRange {
                name: "scale",
                value: scale,
                range: "(0, inf)",
            });
        }
        Ok(Self { mean, scale })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Variance of `x_t` per coordinate.
    pub fn marginal_variance(&self, alpha: f64) -> f64 {
        alpha * alpha * self.scale * self.scale + 1.0 - alpha * alpha
    }

    pub fn analytic_eps(&self, x_t: &DenseTensor, alpha: f64) -> Result<DenseTensor> {
        self.predict_eps(x_t, &vec![alpha; x_t.rows()])
    }
}

impl EpsModel for AnalyticScoreModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn predict_eps(&self, x_t: &DenseTensor, alphas: &[f64]) -> Result<DenseTensor> {
        check_batch(x_t, alphas, self.dim())?;
        let d = self.dim();
        let mut out = Vec::with_capacity(x_t.len());
        for (row, &a) in x_t.iter_rows().zip(alphas) {
            let c = (1.0 - a * a).sqrt() / self.marginal_variance(a);
            for k in 0..d {
                out.push(c * (row[k] - a * self.mean[k]));
            }
        }
        DenseTensor::new(x_t.shape().to_vec(), out)
    }

    fn as_gaussian_oracle(&self) -> Option<&AnalyticScoreModel> {
        Some(self)
    }
}

/// Optimal predictor for a mixture of isotropic Gaussians, weighting each
/// component's Gaussian predictor by its posterior responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureScoreModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    scales: Vec<f64>,
}

impl MixtureScoreModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != scales.len() {
            return Err(Error::ShapeMismatch("mixture parameter lengths differ".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::ShapeMismatch("component means differ in dimension".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || scales.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Invalid("weights and scales must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            scales,
        })
    }
}

impl EpsModel for MixtureScoreModel {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn predict_eps(&self, x_t: &DenseTensor, alphas: &[f64]) -> Result<DenseTensor> {
        let d = self.dim();
        check_batch(x_t, alphas, d)?;
        let k = self.weights.len();
        let mut out = Vec::with_capacity(x_t.len());
        let mut logw = vec![0.0; k];
        let mut var = vec![0.0; k];
        for (row, &a) in x_t.iter_rows().zip(alphas) {
            for c in 0..k {
                let s = self.scales[c];
                var[c] = a * a * s * s + 1.0 - a * a;
                let dist: f64 = row
                    .iter()
                    .zip(&self.means[c])
                    .map(|(x, m)| (x - a * m).powi(2))
                    .sum();
                logw[c] = self.weights[c].ln() - 0.5 * d as f64 * var[c].ln() - 0.5 * dist / var[c];
            }
            let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let norm: f64 = logw.iter().map(|l| (l - top).exp()).sum();
            let sd = (1.0 - a * a).sqrt();
            for j in 0..d {
                let mut e = 0.0;
                for c in 0..k {
                    let r = (logw[c] - top).exp() / norm;
                    e += r * sd * (row[j] - a * self.means[c][j]) / var[c];
                }
                out.push(e);
            }
        }
        DenseTensor::new(x_t.shape().to_vec(), out)
    }
}

fn check_batch(x_t: &DenseTensor, alphas: &[f64], d: usize) -> Result<()> {
    if x_t.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "input dimension {}, model expects {d}",
            x_t.cols()
        )));
    }
    if alphas.len() != x_t.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} noise levels for {} rows",
            alphas.len(),
            x_t.rows()
        )));
    }
    for &a in alphas {
        crate::error::check_open_unit("alpha", a)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    #[test]
    fn examples() {
        let m = AnalyticScoreModel::new(vec![0.0, 0.0], 1.0).unwrap();
        let x = DenseTensor::vector(vec![0.7, -1.1]).unwrap();
        let e = m.analytic_eps(&x, 0.6).unwrap();
        assert!((e.data()[0] - 0.8 * 0.7).abs() < 1e-15 && (e.data()[1] + 0.8 * 1.1).abs() < 1e-15);
        let m = AnalyticScoreModel::new(vec![2.0], 0.5).unwrap();
        let e = m.analytic_eps(&DenseTensor::vector(vec![0.3 * 2.0]).unwrap(), 0.3).unwrap();
        assert_eq!(e.data(), &[0.0]);
        let m = AnalyticScoreModel::new(vec![0.0], 1.0).unwrap();
        let e = m.analytic_eps(&DenseTensor::vector(vec![1.0]).unwrap(), 0.6).unwrap();
        assert!((e.data()[0] - 0.8).abs() < 1e-15);
    }

    /// Regression of ε on x_t over simulated pairs recovers the closed-form
    /// coefficient.
    #[test]
    fn matches_empirical_regression() {
        let m = AnalyticScoreModel::new(vec![1.5], 0.7).unwrap();
        let mut rng = RngState::new(9);
        let a: f64 = 0.55;
        let n = 200_000;
        let (mut sxy, mut sxx, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x0 = 1.5 + 0.7 * rng.normal();
            let e = rng.normal();
            let x = a * x0 + (1.0 - a * a).sqrt() * e;
            sxy += x * e;
            sxx += x * x;
            sx += x;
            sy += e;
        }
        let nf = n as f64;
        let slope = (sxy / nf - sx * sy / nf / nf) / (sxx / nf - (sx / nf).powi(2));
        let want = (1.0 - a * a).sqrt() / m.marginal_variance(a);
        assert!((slope - want).abs() < 0.01, "{slope} vs {want}");
    }

    #[test]
    fn single_component_mixture_is_gaussian() {
        let g = AnalyticScoreModel::new(vec![1.0, -2.0], 0.4).unwrap();
        let m = MixtureScoreModel::new(vec![1.0], vec![vec![1.0, -2.0]], vec![0.4]).unwrap();
        let x = DenseTensor::new(vec![2, 2], vec![0.1, 0.2, -3.0, 4.0]).unwrap();
        let a = [0.3, 0.9];
        let (p, q) = (g.predict_eps(&x, &a).unwrap(), m.predict_eps(&x, &a).unwrap());
        for (u, v) in p.data().iter().zip(q.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
