//! Small networks used as the noise predictor and the noise-scale predictor.

pub mod adam;
pub mod checkpoint;
pub mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{Activation, Conditioning, Gradients, Mlp, Tape};

use crate::error::{Error, Result};
use crate::evaluation::analytic::AnalyticScoreModel;
use crate::numerics::{DenseTensor, RngState};

/// Anything that predicts the injected noise from a noisy batch and its
/// per-row noise levels.
pub trait EpsModel: Sync {
    fn dim(&self) -> usize;

    /// `x_t` is `[B, D]` (or `[D]`); `alphas` has one entry per row.
    fn predict_eps(&self, x_t: &DenseTensor, alphas: &[f64]) -> Result<DenseTensor>;

    /// The closed-form Gaussian predictor, when this model is one.
    fn as_gaussian_oracle(&self) -> Option<&AnalyticScoreModel> {
        None
    }
}

/// Maps a noisy batch to one ratio in `(0, 1)` per row.
pub trait NoiseScaleModel: Sync {
    fn sigma_rows(&self, x: &DenseTensor) -> Result<Vec<f64>>;

    /// Single ratio for a whole batch: the mean over rows.
    fn sigma_pooled(&self, x: &DenseTensor) -> Result<f64> {
        let s = self.sigma_rows(x)?;
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    pub mlp: Mlp,
}

impl ScoreNet {
    pub fn new(dim: usize, hidden: &[usize], rng: &mut RngState) -> Result<Self> {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let mlp = Mlp::new(
            &sizes,
            Activation::Tanh,
            Activation::Identity,
            Conditioning::ConcatAlphaNoise,
            rng,
        )?;
        Ok(Self { mlp })
    }

    /// Three tanh layers of 128 units.
    pub fn default_arch(dim: usize, rng: &mut RngState) -> Result<Self> {
        Self::new(dim, &[128, 128, 128], rng)
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.conditioning() == Conditioning::None || mlp.output_dim() != mlp.input_dim() {
            return Err(Error::Invalid(
                "score network must take the noise level and return a data-sized output".into(),
            ));
        }
        Ok(Self { mlp })
    }
}

impl EpsModel for ScoreNet {
    fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn predict_eps(&self, x_t: &DenseTensor, alphas: &[f64]) -> Result<DenseTensor> {
        self.mlp.predict(x_t, Some(alphas))
    }
}

/// Sigmoid-headed network whose outputs are averaged per row; clamped so
/// rounding can never produce exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingNet {
    pub mlp: Mlp,
}

pub(crate) const SIGMA_FLOOR: f64 = 1e-15;

impl SchedulingNet {
    pub fn new(dim: usize, hidden: &[usize], rng: &mut RngState) -> Result<Self> {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mlp = Mlp::new(
            &sizes,
            Activation::Tanh,
            Activation::Sigmoid,
            Conditioning::None,
            rng,
        )?;
        Ok(Self { mlp })
    }

    /// Two tanh layers of 64 units.
    pub fn default_arch(dim: usize, rng: &mut RngState) -> Result<Self> {
        Self::new(dim, &[64, 64], rng)
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.conditioning() != Conditioning::None
            || *mlp.activations().last().unwrap() != Activation::Sigmoid
        {
            return Err(Error::Invalid(
                "scheduling network needs a sigmoid head and no conditioning".into(),
            ));
        }
        Ok(Self { mlp })
    }

    /// Per-row ratios plus the tape needed to backpropagate through them.
    pub fn forward(&self, x: &DenseTensor) -> Result<(Vec<f64>, Tape)> {
        let (y, tape) = self.mlp.forward(x, None)?;
        Ok((pool_rows(&y, self.mlp.output_dim()), tape))
    }

    /// Backpropagates per-row gradients `d loss / d sigma_b`.
    pub fn backward(&self, tape: &Tape, dsigma: &[f64]) -> Result<Gradients> {
        let k = self.mlp.output_dim();
        if dsigma.len() != tape.batch() {
            return Err(Error::ShapeMismatch(format!(
                "{} ratio gradients for batch {}",
                dsigma.len(),
                tape.batch()
            )));
        }
        let dy: Vec<f64> = dsigma
            .iter()
            .flat_map(|&d| std::iter::repeat_n(d / k as f64, k))
            .collect();
        let dy = DenseTensor::new(vec![tape.batch(), k], dy)?;
        let dy = if tape.is_rank1() {
            dy.reshape(vec![k])?
        } else {
            dy
        };
        self.mlp.backward(tape, &dy)
    }
}

fn pool_rows(y: &DenseTensor, k: usize) -> Vec<f64> {
    y.data()
        .chunks_exact(k)
        .map(|r| (r.iter().sum::<f64>() / k as f64).clamp(SIGMA_FLOOR, 1.0 - SIGMA_FLOOR))
        .collect()
}

impl NoiseScaleModel for SchedulingNet {
    fn sigma_rows(&self, x: &DenseTensor) -> Result<Vec<f64>> {
        let y = self.mlp.predict(x, None)?;
        Ok(pool_rows(&y, self.mlp.output_dim()))
    }
}

/// A noise-scale model that ignores its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSigma(pub f64);

impl NoiseScaleModel for ConstantSigma {
    fn sigma_rows(&self, x: &DenseTensor) -> Result<Vec<f64>> {
        Ok(vec![self.0; x.rows()])
    }
}
