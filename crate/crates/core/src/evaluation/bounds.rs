//! Monte-Carlo estimates of the per-step lower bounds on the log evidence.
//!
//! For each draw `x_t = α_t x0 + √(1 − α_t²) ε`:
//!
//! ```text
//! f_elbo  = −(KL(q-posterior ‖ reverse) + R)
//! f_score = −(KL(reverse ‖ q-posterior) + R)
//! f_bddm  = f_score + step loss at β̂
//! ```
//!
//! `R` is the reconstruction term after a deterministic one-step jump from
//! `x_t` to `x_1`. The two KL terms have equal covariances and so agree; they
//! are still computed separately.

use std::fmt::Write as _;

use crate::diffusion::{forward_marginal_rows, forward_posterior, ddpm_reverse_gaussian, predict_x0, DiffusionStep};
use crate::error::{Error, Result};
use crate::losses::{l_step, r_theta_from_sq, ConstantVariant, NoiseDots};
use crate::nn::{EpsModel, NoiseScaleModel};
use crate::numerics::tensor::fmt_f64;
use crate::numerics::{gaussian_sample, kl_isotropic_gaussians, DenseTensor, RngState};
use crate::schedule::{beta_upper_bound, NoiseSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub t: usize,
    pub f_elbo: f64,
    pub f_elbo_se: f64,
    pub f_score: f64,
    pub f_score_se: f64,
    pub f_bddm: f64,
    pub f_bddm_se: f64,
    /// Paired `f_bddm − f_elbo`.
    pub gap: f64,
    pub gap_se: f64,
    pub samples: usize,
}

impl BoundReport {
    pub fn csv_header() -> &'static str {
        "t,f_elbo,f_elbo_se,f_score,f_score_se,f_bddm,f_bddm_se"
    }

    pub fn csv_row(&self) -> String {
        [self.f_elbo, self.f_elbo_se, self.f_score, self.f_score_se, self.f_bddm, self.f_bddm_se]
            .iter()
            .fold(self.t.to_string(), |mut s, v| {
                write!(s, ",{}", fmt_f64(*v)).unwrap();
                s
            })
    }

    /// `f_bddm ≥ f_elbo` up to `k` paired standard errors.
    pub fn ordered_within(&self, k: f64) -> bool {
        self.gap >= -k * self.gap_se
    }
}

pub fn bounds_csv(reports: &[BoundReport]) -> String {
    let mut out = format!("{}\n", BoundReport::csv_header());
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Where the step-loss scale `β̂` comes from.
pub enum BetaHatSource<'a> {
    Fixed(f64),
    /// `β̂ = bound · σ(x_t)`, the bound taken from the training step `τ`
    /// later (clamped to `T`).
    Network { net: &'a dyn NoiseScaleModel, tau: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    pub mc_samples: usize,
    /// Keep the reconstruction term. Off by default so curves compare the
    /// KL terms only.
    pub keep_reconstruction: bool,
    pub variant: ConstantVariant,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            mc_samples: 1000,
            keep_reconstruction: false,
            variant: ConstantVariant::Oracle,
        }
    }
}

/// Successor-step bound for step `t`. When the sampled pair is
/// inconsistent, falls back to `min(1 − α_t², β_next)`, which still keeps
/// `β̂ < 1 − α_t²`.
fn network_bound(schedule: &NoiseSchedule, t: usize, tau: usize) -> Result<f64> {
    let s = (t + tau).min(schedule.len());
    let a = schedule.alpha(t);
    let beta_next = if s > t {
        let r = schedule.alpha(s) / a;
        1.0 - r * r
    } else {
        schedule.beta(t)
    };
    match beta_upper_bound(a, beta_next) {
        Ok(b) => Ok(b),
        Err(Error::InconsistentScales(_)) => Ok((1.0 - a * a).min(beta_next)),
        Err(e) => Err(e),
    }
}

pub fn estimate_bounds(
    score: &dyn EpsModel,
    beta_hat: &BetaHatSource,
    x0_batch: &DenseTensor,
    schedule: &NoiseSchedule,
    t: usize,
    opts: &BoundOptions,
    rng: &mut RngState,
) -> Result<BoundReport> {
    if t < 2 || t > schedule.len() {
        return Err(Error::OutOfRange {
            name: "t",
            value: t as f64,
            range: "[2, T]",
        });
    }
    if opts.mc_samples < 2 {
        return Err(Error::Invalid("need at least two Monte-Carlo samples".into()));
    }
    let n = opts.mc_samples;
    let d = x0_batch.cols();
    let idx: Vec<usize> = (0..n).map(|_| rng.below(x0_batch.rows())).collect();
    let x0 = x0_batch.select_rows(&idx)?;
    let eps = gaussian_sample(rng, &[n, d])?;
    let a_t = schedule.alpha(t);
    let x_t = forward_marginal_rows(&x0, &vec![a_t; n], &eps)?;
    let eps_hat = score.predict_eps(&x_t, &vec![a_t; n])?;
    let step = DiffusionStep::from_schedule(schedule, t)?;

    // One deterministic jump to step 1, then the reconstruction term there.
    let a1 = schedule.alpha(1);
    let beta1 = schedule.beta(1);
    let x0_hat = predict_x0(&x_t, &eps_hat, a_t)?;
    let x1 = x0_hat.lincomb(a1, &eps_hat, (1.0 - a1 * a1).sqrt())?;
    let eps1_hat = score.predict_eps(&x1, &vec![a1; n])?;

    let betas: Vec<f64> = match beta_hat {
        BetaHatSource::Fixed(b) => vec![*b; n],
        BetaHatSource::Network { net, tau } => {
            let bound = network_bound(schedule, t, *tau)?;
            net.sigma_rows(&x_t)?.into_iter().map(|s| bound * s).collect()
        }
    };

    let mut elbo = Vec::with_capacity(n);
    let mut score_b = Vec::with_capacity(n);
    let mut bddm = Vec::with_capacity(n);
    let mut gap = Vec::with_capacity(n);
    for i in 0..n {
        let row = |m: &DenseTensor| DenseTensor::vector(m.row(i).to_vec());
        let (x0_i, xt_i, e_i, eh_i) = (row(&x0)?, row(&x_t)?, row(&eps)?, row(&eps_hat)?);
        let post = forward_posterior(&x0_i, &xt_i, &step)?;
        let rev = ddpm_reverse_gaussian(&xt_i, &eh_i, &step)?;
        let kl_elbo = kl_isotropic_gaussians(&post, &rev)?;
        let kl_score = kl_isotropic_gaussians(&rev, &post)?;
        let recon = if opts.keep_reconstruction {
            let eps1: Vec<f64> = x1
                .row(i)
                .iter()
                .zip(x0.row(i))
                .map(|(x, z)| (x - a1 * z) / (1.0 - a1 * a1).sqrt())
                .collect();
            let err = NoiseDots::new(&eps1, eps1_hat.row(i)).diff_sq();
            r_theta_from_sq(err, beta1, d)?.value
        } else {
            0.0
        };
        let step_loss = l_step(&e_i, &eh_i, betas[i], a_t, d, opts.variant)?.value;
        let fe = -(kl_elbo + recon);
        let fs = -(kl_score + recon);
        elbo.push(fe);
        score_b.push(fs);
        bddm.push(fs + step_loss);
        gap.push(fs + step_loss - fe);
    }
    let (f_elbo, f_elbo_se) = mean_se(&elbo);
    let (f_score, f_score_se) = mean_se(&score_b);
    let (f_bddm, f_bddm_se) = mean_se(&bddm);
    let (g, g_se) = mean_se(&gap);
    Ok(BoundReport {
        t,
        f_elbo,
        f_elbo_se,
        f_score,
        f_score_se,
        f_bddm,
        f_bddm_se,
        gap: g,
        gap_se: g_se,
        samples: n,
    })
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evenly spread steps in `[2, T]`, `count` of them, ascending and distinct.
pub fn spread_steps(steps: usize, count: usize) -> Vec<usize> {
    if steps < 2 || count == 0 {
        return Vec::new();
    }
    let span = steps - 2;
    let mut out: Vec<usize> = (0..count)
        .map(|k| {
            if count == 1 {
                2
            } else {
                2 + (k * span + (count - 1) / 2) / (count - 1)
            }
        })
        .collect();
    out.dedup();
    out
}
