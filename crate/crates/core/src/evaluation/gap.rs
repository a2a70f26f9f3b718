//! Quadrature check that the log-evidence gap of the score bound splits
//! into per-step losses.
//!
//! With the exact predictor for 1-D Gaussian data and `q_φ` pinned to the
//! training kernels, the gap is the KL from the reverse chain
//! `p(x_{1:t−1} | x_t)` to the product of forward marginals
//! `Π_i q(x_{i−1} | x0)`, averaged over `x_t ~ q(x_t | x0)`. The left side
//! integrates that chain KL on a grid from pointwise log densities. The
//! right side sums the closed-form step losses, each averaged over the
//! grid-propagated law of `x_i`.

use crate::diffusion::{ddpm_reverse_mean, DiffusionStep};
use crate::error::{Error, Result};
use crate::losses::{l_step, ConstantVariant};
use crate::nn::EpsModel;
use crate::numerics::DenseTensor;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub diff: f64,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

pub fn gap_identity_check(
    model: &dyn EpsModel,
    schedule: &NoiseSchedule,
    t: usize,
    x0: f64,
    grid: usize,
) -> Result<GapCheck> {
    let oracle = model
        .as_gaussian_oracle()
        .ok_or_else(|| Error::Invalid("gap identity needs the exact Gaussian predictor".into()))?;
    if oracle.dim() != 1 {
        return Err(Error::Invalid("gap identity check is one-dimensional".into()));
    }
    if !(2..=3).contains(&t) || t > schedule.len() {
        return Err(Error::OutOfRange {
            name: "t",
            value: t as f64,
            range: "[2, min(3, T)]",
        });
    }
    if grid < 512 {
        return Err(Error::Invalid(format!("grid of {grid} points is too coarse")));
    }
    let half = x0.abs() + 8.0 * oracle.scale().max(1.0) + oracle.mean()[0].abs();
    let h = 2.0 * half / grid as f64;
    let xs: Vec<f64> = (0..grid).map(|k| -half + (k as f64 + 0.5) * h).collect();
    let grid_t = DenseTensor::new(vec![grid, 1], xs.clone())?;

    let a_t = schedule.alpha(t);
    let mut mass: Vec<f64> = xs
        .iter()
        .map(|&x| log_normal(x, a_t * x0, 1.0 - a_t * a_t).exp() * h)
        .collect();
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for i in (2..=t).rev() {
        let step = DiffusionStep::from_schedule(schedule, i)?;
        let a = step.alpha;
        let eps_hat = model.predict_eps(&grid_t, &vec![a; grid])?;
        let means = ddpm_reverse_mean(&grid_t, &eps_hat, &step)?;
        let var = step.posterior_variance();
        let a_prev = step.alpha_prev;
        let ref_var = 1.0 - a_prev * a_prev;
        let log_ref: Vec<f64> = xs.iter().map(|&y| log_normal(y, a_prev * x0, ref_var)).collect();
        let mut next = vec![0.0; grid];
        for k in 0..grid {
            let w = mass[k];
            if w < 1e-300 {
                continue;
            }
            let mu = means.data()[k];
            let mut inner = 0.0;
            for j in 0..grid {
                let lp = log_normal(xs[j], mu, var);
                let p = lp.exp() * h;
                if p == 0.0 {
                    continue;
                }
                inner += p * (lp - log_ref[j]);
                next[j] += w * p;
            }
            lhs += w * inner;
            let eps = (xs[k] - a * x0) / (1.0 - a * a).sqrt();
            let e = DenseTensor::vector(vec![eps])?;
            let eh = DenseTensor::vector(vec![eps_hat.data()[k]])?;
            rhs += w * l_step(&e, &eh, step.beta, a, 1, ConstantVariant::Oracle)?.value;
        }
        mass = next;
    }
    Ok(GapCheck {
        lhs,
        rhs,
        diff: (lhs - rhs).abs(),
    })
}
