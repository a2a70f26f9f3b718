//! Forward and reverse Gaussian kernels, and the reverse-chain sampler.

use crate::error::{Error, Result};
use crate::nn::EpsModel;
use crate::numerics::{gaussian_sample, DenseTensor, GaussianParams, RngState};
use crate::schedule::{validate_for_sampling, InferenceSchedule, NoiseSchedule};

/// One transition between adjacent cumulative scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionStep {
    pub t: usize,
    pub beta: f64,
    pub alpha: f64,
    pub alpha_prev: f64,
}

impl DiffusionStep {
    pub fn new(t: usize, beta: f64, alpha: f64, alpha_prev: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::OutOfRange {
                name: "beta",
                value: beta,
                range: "(0, 1)",
            });
        }
        if !(alpha > 0.0 && alpha < 1.0 && alpha_prev > 0.0 && alpha_prev <= 1.0) {
            return Err(Error::InconsistentScales(format!(
                "alpha = {alpha}, alpha_prev = {alpha_prev}"
            )));
        }
        if (alpha - alpha_prev * (1.0 - beta).sqrt()).abs() > 1e-12 {
            return Err(Error::InconsistentScales(format!(
                "alpha = {alpha} but alpha_prev * sqrt(1 - beta) = {}",
                alpha_prev * (1.0 - beta).sqrt()
            )));
        }
        Ok(Self {
            t,
            beta,
            alpha,
            alpha_prev,
        })
    }

    pub fn from_schedule(s: &NoiseSchedule, t: usize) -> Result<Self> {
        if t == 0 || t > s.len() {
            return Err(Error::Invalid(format!("step {t} outside 1..={}", s.len())));
        }
        Self::new(t, s.beta(t), s.alpha(t), s.alpha(t - 1))
    }

    pub fn from_inference(s: &InferenceSchedule, n: usize) -> Result<Self> {
        if n == 0 || n > s.len() {
            return Err(Error::Invalid(format!("step {n} outside 1..={}", s.len())));
        }
        // Clean-anchored schedules give α̂_0 = 1 up to rounding.
        let prev = s.alpha_hat(n - 1).min(1.0);
        Self::new(n, s.beta_hat(n), s.alpha_hat(n), prev)
    }

    /// Variance shared by the forward posterior and the reverse kernel.
    pub fn posterior_variance(&self) -> f64 {
        (1.0 - self.alpha_prev * self.alpha_prev) * self.beta / (1.0 - self.alpha * self.alpha)
    }
}

/// `x_t = α_t x_0 + √(1 − α_t²) ε`.
pub fn forward_marginal_sample(x0: &DenseTensor, alpha_t: f64, eps: &DenseTensor) -> Result<DenseTensor> {
    if !(alpha_t > 0.0 && alpha_t <= 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha_t",
            value: alpha_t,
            range: "(0, 1]",
        });
    }
    x0.lincomb(alpha_t, eps, (1.0 - alpha_t * alpha_t).max(0.0).sqrt())
}

/// Batched forward marginal with one scale per row.
pub fn forward_marginal_rows(x0: &DenseTensor, alphas: &[f64], eps: &DenseTensor) -> Result<DenseTensor> {
    x0.same_shape(eps)?;
    if alphas.len() != x0.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} scales for {} rows",
            alphas.len(),
            x0.rows()
        )));
    }
    let d = x0.cols();
    let mut out = Vec::with_capacity(x0.len());
    for (r, &a) in alphas.iter().enumerate() {
        let s = (1.0 - a * a).sqrt();
        for k in 0..d {
            out.push(a * x0.data()[r * d + k] + s * eps.data()[r * d + k]);
        }
    }
    DenseTensor::new(x0.shape().to_vec(), out)
}

/// `x_t = √(1 − β_t) x_{t−1} + √β_t ε`.
pub fn forward_step_sample(x_prev: &DenseTensor, beta_t: f64, eps: &DenseTensor) -> Result<DenseTensor> {
    x_prev.lincomb((1.0 - beta_t).sqrt(), eps, beta_t.sqrt())
}

/// `q(x_{t−1} | x_t, x_0)`.
pub fn forward_posterior(x0: &DenseTensor, x_t: &DenseTensor, step: &DiffusionStep) -> Result<GaussianParams> {
    if step.t <= 1 {
        return Err(Error::NoPosteriorAtFirstStep);
    }
    let denom = 1.0 - step.alpha * step.alpha;
    let c0 = step.alpha_prev * step.beta / denom;
    let ct = (1.0 - step.beta).sqrt() * (1.0 - step.alpha_prev * step.alpha_prev) / denom;
    let mean = x0.lincomb(c0, x_t, ct)?;
    GaussianParams::new(mean, step.posterior_variance())
}

/// Mean of the reverse kernel given a noise prediction.
pub fn ddpm_reverse_mean(x_t: &DenseTensor, eps_hat: &DenseTensor, step: &DiffusionStep) -> Result<DenseTensor> {
    let denom = 1.0 - step.alpha * step.alpha;
    if denom <= 0.0 {
        return Err(Error::InconsistentScales("1 - alpha_t^2 = 0".into()));
    }
    let inv = 1.0 / (1.0 - step.beta).sqrt();
    x_t.lincomb(inv, eps_hat, -inv * step.beta / denom.sqrt())
}

/// The reverse kernel `p_θ(x_{t−1} | x_t)` as a Gaussian.
pub fn ddpm_reverse_gaussian(x_t: &DenseTensor, eps_hat: &DenseTensor, step: &DiffusionStep) -> Result<GaussianParams> {
    GaussianParams::new(ddpm_reverse_mean(x_t, eps_hat, step)?, step.posterior_variance())
}

pub fn ddpm_reverse_step(
    x_t: &DenseTensor,
    eps_hat: &DenseTensor,
    step: &DiffusionStep,
    z: &DenseTensor,
) -> Result<DenseTensor> {
    let mean = ddpm_reverse_mean(x_t, eps_hat, step)?;
    mean.lincomb(1.0, z, step.posterior_variance().sqrt())
}

/// Prediction of the clean signal: `(x_t − √(1 − α_t²) ε̂) / α_t`.
pub fn predict_x0(x_t: &DenseTensor, eps_hat: &DenseTensor, alpha_t: f64) -> Result<DenseTensor> {
    x_t.lincomb(1.0 / alpha_t, eps_hat, -(1.0 - alpha_t * alpha_t).sqrt() / alpha_t)
}

/// Noise level of the non-Markovian step; `eta = 1` reproduces the
/// posterior variance of adjacent steps.
pub fn ddim_sigma(alpha_t: f64, alpha_prev: f64, eta: f64) -> f64 {
    let ratio = (1.0 - alpha_t * alpha_t / (alpha_prev * alpha_prev)).max(0.0);
    eta * ((1.0 - alpha_prev * alpha_prev) / (1.0 - alpha_t * alpha_t)).sqrt() * ratio.sqrt()
}

pub fn ddim_reverse_step(
    x_t: &DenseTensor,
    eps_hat: &DenseTensor,
    alpha_t: f64,
    alpha_prev: f64,
    eta: f64,
    z: &DenseTensor,
) -> Result<DenseTensor> {
    if !(alpha_t > 0.0 && alpha_t < 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha_t",
            value: alpha_t,
            range: "(0, 1)",
        });
    }
    if !(alpha_prev > 0.0 && alpha_prev <= 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha_prev",
            value: alpha_prev,
            range: "(0, 1]",
        });
    }
    if eta < 0.0 {
        return Err(Error::OutOfRange {
            name: "eta",
            value: eta,
            range: "[0, inf)",
        });
    }
    let sigma = ddim_sigma(alpha_t, alpha_prev, eta);
    let rest = 1.0 - alpha_prev * alpha_prev - sigma * sigma;
    if rest < -1e-15 {
        return Err(Error::InvalidSigma(rest));
    }
    let f = predict_x0(x_t, eps_hat, alpha_t)?;
    let x = f.lincomb(alpha_prev, eps_hat, rest.max(0.0).sqrt())?;
    x.lincomb(1.0, z, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReverseKind {
    Ddpm,
    Ddim { eta: f64 },
}

impl ReverseKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(ReverseKind::Ddpm),
            "ddim" => Ok(ReverseKind::Ddim { eta: 0.0 }),
            _ => Err(Error::Parse(format!("unknown reverse kind {s:?}"))),
        }
    }
}

/// Runs the reverse chain from white noise for `count` independent
/// chains. The schedule is validated before any step; the last step adds
/// no noise.
pub fn sample(
    model: &dyn EpsModel,
    schedule: &InferenceSchedule,
    count: usize,
    rng: &mut RngState,
    kind: ReverseKind,
) -> Result<DenseTensor> {
    validate_for_sampling(schedule).map_err(|v| Error::ScheduleViolation(v.to_string()))?;
    if count == 0 {
        return Err(Error::EmptyShape);
    }
    let x = gaussian_sample(rng, &[count, model.dim()])?;
    reverse_chain(model, schedule, x, rng, kind)
}

/// Reverse chain from a given starting batch. Assumes the schedule is valid.
pub fn reverse_chain(
    model: &dyn EpsModel,
    schedule: &InferenceSchedule,
    mut x: DenseTensor,
    rng: &mut RngState,
    kind: ReverseKind,
) -> Result<DenseTensor> {
    let shape = x.shape().to_vec();
    for n in (1..=schedule.len()).rev() {
        let alpha = schedule.alpha_hat(n);
        let eps_hat = model.predict_eps(&x, &vec![alpha; x.rows()])?;
        x = match kind {
            ReverseKind::Ddpm => {
                let step = DiffusionStep::from_inference(schedule, n)?;
                if n > 1 {
                    let z = gaussian_sample(rng, &shape)?;
                    ddpm_reverse_step(&x, &eps_hat, &step, &z)?
                } else {
                    ddpm_reverse_mean(&x, &eps_hat, &step)?
                }
            }
            ReverseKind::Ddim { eta } => {
                let alpha_prev = if n > 1 { schedule.alpha_hat(n - 1) } else { 1.0 };
                let z = if eta > 0.0 && n > 1 {
                    gaussian_sample(rng, &shape)?
                } else {
                    DenseTensor::zeros(&shape)?
                };
                ddim_reverse_step(&x, &eps_hat, alpha, alpha_prev, eta, &z)?
            }
        };
    }
    Ok(x)
}
