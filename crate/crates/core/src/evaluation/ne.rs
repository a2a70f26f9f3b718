//! Noise-estimator baseline: a network reads the noise level `α` off `x_t`
//! under a log-variance regression loss. At sampling time a fixed step
//! schedule is used and only the noise level fed to the score network and
//! the reverse kernel comes from the estimator.

use crate::diffusion::{ddpm_reverse_mean, ddpm_reverse_step, DiffusionStep};
use crate::error::{Error, Result};
use crate::losses::{l_ne, log_noise_var};
use crate::nn::{AdamConfig, AdamState, EpsModel, SchedulingNet};
use crate::numerics::{gaussian_sample, DenseTensor, RngState};
use crate::schedule::NoiseSchedule;
use crate::training::{draw_rows, normals, LossTrace, TraceRow};
use crate::diffusion::forward_marginal_rows;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimator {
    pub net: SchedulingNet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeConfig {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for NeConfig {
    fn default() -> Self {
        Self {
            iters: 5000,
            batch: 64,
            lr: 1e-3,
        }
    }
}

/// Estimates are kept off the ends so `ln(1 − α̂²)` stays finite.
const ALPHA_EDGE: f64 = 1e-12;

/// Appends `ln(mean x²)` to each row: the noise level is mostly a function
/// of a sample's energy, which a small tanh network struggles to form.
pub fn with_energy(x: &DenseTensor) -> Result<DenseTensor> {
    let d = x.cols();
    let mut out = Vec::with_capacity(x.rows() * (d + 1));
    for row in x.iter_rows() {
        out.extend_from_slice(row);
        let e = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        out.push(e.max(1e-300).ln());
    }
    DenseTensor::new(vec![x.rows(), d + 1], out)
}

impl NoiseEstimator {
    pub fn new(dim: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            net: SchedulingNet::default_arch(dim + 1, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.net.mlp.input_dim() - 1
    }

    pub fn predict_alpha(&self, x: &DenseTensor) -> Result<Vec<f64>> {
        let (a, _) = self.net.forward(&with_energy(x)?)?;
        Ok(a.into_iter().map(|v| v.clamp(ALPHA_EDGE, 1.0 - ALPHA_EDGE)).collect())
    }
}

struct NeBatch {
    x_t: DenseTensor,
    alphas: Vec<f64>,
}

fn draw_batch(data: &DenseTensor, schedule: &NoiseSchedule, batch: usize, rng: &mut RngState) -> Result<NeBatch> {
    let x0 = draw_rows(data, batch, rng)?;
    let alphas: Vec<f64> = (0..batch)
        .map(|_| schedule.alpha(rng.range_inclusive(1, schedule.len())))
        .collect();
    let eps = normals(rng, batch, data.cols())?;
    Ok(NeBatch {
        x_t: forward_marginal_rows(&x0, &alphas, &eps)?,
        alphas,
    })
}

/// Mean log-variance regression loss on `count` fresh draws.
pub fn ne_loss(
    est: &NoiseEstimator,
    data: &DenseTensor,
    schedule: &NoiseSchedule,
    count: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let b = draw_batch(data, schedule, count, rng)?;
    let pred = est.predict_alpha(&b.x_t)?;
    let mut total = 0.0;
    for (a, p) in b.alphas.iter().zip(&pred) {
        total += l_ne(*a, *p)?.value;
    }
    Ok(total / count as f64)
}

pub fn train_ne_baseline(
    mut est: NoiseEstimator,
    data: &DenseTensor,
    schedule: &NoiseSchedule,
    cfg: &NeConfig,
    rng: &mut RngState,
) -> Result<(NoiseEstimator, LossTrace)> {
    if cfg.batch == 0 {
        return Err(Error::Invalid("batch must be positive".into()));
    }
    if data.cols() != est.dim() {
        return Err(Error::ShapeMismatch("data and estimator dimensions differ".into()));
    }
    let mut opt = AdamState::for_model(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &est.net.mlp);
    let mut trace = LossTrace::default();
    let n = cfg.batch as f64;
    for iteration in 0..cfg.iters {
        let b = draw_batch(data, schedule, cfg.batch, rng)?;
        let (raw, tape) = est.net.forward(&with_energy(&b.x_t)?)?;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(raw.len());
        for (a, s) in b.alphas.iter().zip(&raw) {
            let p = s.clamp(ALPHA_EDGE, 1.0 - ALPHA_EDGE);
            let r = log_noise_var(*a) - log_noise_var(p);
            loss += r * r / n;
            grad.push(4.0 * r * p / (1.0 - p * p) / n);
        }
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("iteration {iteration}: loss {loss}")));
        }
        let grads = est.net.backward(&tape, &grad)?;
        opt.step(&mut est.net.mlp, &grads)?;
        trace.rows.push(TraceRow {
            iteration,
            loss,
            quadratic: loss,
            constant: 0.0,
        });
    }
    Ok((est, trace))
}

/// Reverse chain over the fixed `betas` (clean end first). Each step reads
/// the noise level off the current batch, averaged over rows, capped so the
/// kernel stays proper.
pub fn ne_sample(
    score: &dyn EpsModel,
    est: &NoiseEstimator,
    betas: &[f64],
    count: usize,
    rng: &mut RngState,
) -> Result<DenseTensor> {
    if betas.is_empty() || count == 0 {
        return Err(Error::Invalid("need at least one step and one sample".into()));
    }
    let mut x = gaussian_sample(rng, &[count, score.dim()])?;
    for n in (1..=betas.len()).rev() {
        let beta = betas[n - 1];
        let pred = est.predict_alpha(&x)?;
        let cap = (1.0 - beta).sqrt() * (1.0 - 1e-9);
        let alpha = (pred.iter().sum::<f64>() / count as f64).clamp(1e-6, cap);
        let step = DiffusionStep::new(n, beta, alpha, alpha / (1.0 - beta).sqrt())?;
        let eps_hat = score.predict_eps(&x, &vec![alpha; count])?;
        x = if n > 1 {
            let z = gaussian_sample(rng, x.shape())?;
            ddpm_reverse_step(&x, &eps_hat, &step, &z)?
        } else {
            ddpm_reverse_mean(&x, &eps_hat, &step)?
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::AnalyticScoreModel;
    use crate::schedule::linear_schedule;

    #[test]
    fn training_reads_noise_level_extremes() {
        let mut rng = RngState::new(21);
        // A single point only pins the noise level down when its norm
        // concentrates, so the check runs in a moderately high dimension.
        let dim = 16;
        let data = gaussian_sample(&mut rng, &[512, dim]).unwrap().scale(0.05).unwrap();
        let schedule = linear_schedule(200, 0.9).unwrap();
        let est = NoiseEstimator::new(dim, &mut rng).unwrap();
        let before = ne_loss(&est, &data, &schedule, 2000, &mut RngState::new(99)).unwrap();
        let cfg = NeConfig { iters: 3000, batch: 64, lr: 3e-3 };
        let (est, _) = train_ne_baseline(est, &data, &schedule, &cfg, &mut rng).unwrap();
        let after = ne_loss(&est, &data, &schedule, 2000, &mut RngState::new(99)).unwrap();
        assert!(after < before, "{after} vs {before}");
        // Pure-noise and clean inputs, compared with the Bayes-optimal
        // regression output under the uniform step prior.
        let noise = gaussian_sample(&mut rng, &[256, dim]).unwrap();
        let clean = data.select_rows(&(0..256).collect::<Vec<_>>()).unwrap();
        for (x, lo, hi) in [(&noise, 0.0, 0.5), (&clean, 0.95, 1.0)] {
            let net = est.predict_alpha(x).unwrap().iter().sum::<f64>() / 256.0;
            let bayes = bayes_alpha(x, &schedule, 0.05).iter().sum::<f64>() / 256.0;
            assert!((net - bayes).abs() < 0.05, "net {net} vs Bayes {bayes}");
            assert!(bayes > lo && bayes < hi, "Bayes {bayes}");
        }
    }

    /// `α̂` solving `ln(1 − α̂²) = E[ln(1 − α²) | x]` for centred Gaussian
    /// data of scale `s0`, with the step uniform over the schedule.
    fn bayes_alpha(x: &DenseTensor, schedule: &NoiseSchedule, s0: f64) -> Vec<f64> {
        let d = x.cols() as f64;
        x.iter_rows()
            .map(|row| {
                let r2: f64 = row.iter().map(|v| v * v).sum();
                let logw: Vec<f64> = (1..=schedule.len())
                    .map(|t| {
                        let a = schedule.alpha(t);
                        let v = a * a * s0 * s0 + 1.0 - a * a;
                        -0.5 * d * v.ln() - 0.5 * r2 / v
                    })
                    .collect();
                let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let (mut num, mut den) = (0.0, 0.0);
                for (t, lw) in logw.iter().enumerate() {
                    let w = (lw - top).exp();
                    num += w * log_noise_var(schedule.alpha(t + 1));
                    den += w;
                }
                (1.0 - (num / den).exp()).sqrt()
            })
            .collect()
    }

    #[test]
    fn sampler_runs_with_constant_estimate() {
        let score = AnalyticScoreModel::new(vec![0.0, 0.0], 1.0).unwrap();
        let mut rng = RngState::new(3);
        let est = NoiseEstimator::new(2, &mut rng).unwrap();
        let betas = linear_schedule(6, 0.9).unwrap().betas().to_vec();
        let x = ne_sample(&score, &est, &betas, 50, &mut rng).unwrap();
        assert_eq!(x.shape(), &[50, 2]);
        assert!(x.data().iter().all(|v| v.is_finite()));
    }
}
