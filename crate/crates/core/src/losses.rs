//! Training objectives and closed-form bound terms.
//!
//! Throughout, `a = 1 − α_t²` is the total noise variance at the sampled
//! training step and `b = β̂` the candidate noise scale.

use crate::error::{Error, Result};
use crate::numerics::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl LossValue {
    fn plain(value: f64) -> Self {
        Self {
            value,
            components: Vec::new(),
        }
    }

    fn split(parts: Vec<(&'static str, f64)>) -> Self {
        Self {
            value: parts.iter().map(|p| p.1).sum(),
            components: parts,
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|c| c.0 == name).map(|c| c.1)
    }
}

/// Which constant accompanies the quadratic term of the step loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantVariant {
    /// `(D/2) ln(a/b) + (D/2)(b/a − 1)`: the variance part of the exact KL.
    Oracle,
    /// `(1/4) ln(a/b) + (D/2)(b/a − 1)`: the published form, with a
    /// dimension-free log coefficient.
    QuarterLog,
}

impl ConstantVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ConstantVariant::Oracle),
            "quarter-log" => Ok(ConstantVariant::QuarterLog),
            _ => Err(Error::Parse(format!("unknown constant variant {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstantVariant::Oracle => "oracle",
            ConstantVariant::QuarterLog => "quarter-log",
        }
    }
}

fn diff_sq(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    a.same_shape(b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `‖ε − ε̂‖²`.
pub fn l_ddpm(eps_true: &DenseTensor, eps_pred: &DenseTensor) -> Result<LossValue> {
    Ok(LossValue::plain(diff_sq(eps_true, eps_pred)?))
}

/// `β_t / (2(1 − β_t − α_t²)) · ‖ε − ε̂‖²`.
pub fn l_score_simplified(
    eps_true: &DenseTensor,
    eps_pred: &DenseTensor,
    beta_t: f64,
    alpha_t: f64,
) -> Result<LossValue> {
    let w = score_weight(beta_t, alpha_t)?;
    Ok(LossValue::plain(w * diff_sq(eps_true, eps_pred)?))
}

/// Weight turning the noise-prediction error into the per-step KL.
pub fn score_weight(beta_t: f64, alpha_t: f64) -> Result<f64> {
    let denom = 1.0 - beta_t - alpha_t * alpha_t;
    if !(denom > 0.0) {
        return Err(Error::InconsistentScales(format!(
            "1 - beta - alpha^2 = {denom}"
        )));
    }
    Ok(beta_t / (2.0 * denom))
}

/// `‖ε_1 − ε̂_1‖² / (2(1 − β_1)) + (D/2) ln(2π β_1)`.
pub fn r_theta(eps1_true: &DenseTensor, eps1_pred: &DenseTensor, beta_1: f64, dim: usize) -> Result<LossValue> {
    r_theta_from_sq(diff_sq(eps1_true, eps1_pred)?, beta_1, dim)
}

pub fn r_theta_from_sq(err_sq: f64, beta_1: f64, dim: usize) -> Result<LossValue> {
    crate::error::check_open_unit("beta_1", beta_1)?;
    Ok(LossValue::split(vec![
        ("quadratic", err_sq / (2.0 * (1.0 - beta_1))),
        ("log_constant", 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * beta_1).ln()),
    ]))
}

fn check_step_scales(beta_hat: f64, alpha_t: f64) -> Result<f64> {
    let a = 1.0 - alpha_t * alpha_t;
    if !(beta_hat > 0.0 && beta_hat < a) {
        return Err(Error::InconsistentScales(format!(
            "beta_hat = {beta_hat} outside (0, 1 - alpha^2 = {a})"
        )));
    }
    Ok(a)
}

pub fn c_t(beta_hat: f64, alpha_t: f64, dim: usize, variant: ConstantVariant) -> Result<f64> {
    let a = check_step_scales(beta_hat, alpha_t)?;
    Ok(c_t_unchecked(beta_hat, a, dim as f64, variant))
}

fn c_t_unchecked(b: f64, a: f64, d: f64, variant: ConstantVariant) -> f64 {
    let log = (a / b).ln();
    let lin = 0.5 * d * (b / a - 1.0);
    match variant {
        ConstantVariant::Oracle => 0.5 * d * log + lin,
        ConstantVariant::QuarterLog => 0.25 * log + lin,
    }
}

/// `‖√a ε − (b/√a) ε̂‖² / (2(a − b)) + C_t`.
pub fn l_step(
    eps_true: &DenseTensor,
    eps_pred: &DenseTensor,
    beta_hat: f64,
    alpha_t: f64,
    dim: usize,
    variant: ConstantVariant,
) -> Result<LossValue> {
    eps_true.same_shape(eps_pred)?;
    let dots = NoiseDots::new(eps_true.data(), eps_pred.data());
    Ok(l_step_with_grad(&dots, beta_hat, alpha_t, dim, variant)?.0)
}

/// Sufficient statistics of an `(ε, ε̂)` pair for the step loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDots {
    /// `‖ε‖²`
    pub true_sq: f64,
    /// `ε · ε̂`
    pub cross: f64,
    /// `‖ε̂‖²`
    pub pred_sq: f64,
}

impl NoiseDots {
    pub fn new(eps: &[f64], eps_hat: &[f64]) -> Self {
        let mut d = Self {
            true_sq: 0.0,
            cross: 0.0,
            pred_sq: 0.0,
        };
        for (&e, &h) in eps.iter().zip(eps_hat) {
            d.true_sq += e * e;
            d.cross += e * h;
            d.pred_sq += h * h;
        }
        d
    }

    pub fn diff_sq(&self) -> f64 {
        (self.true_sq - 2.0 * self.cross + self.pred_sq).max(0.0)
    }
}

/// Step loss and its derivative with respect to `β̂`.
pub fn l_step_with_grad(
    dots: &NoiseDots,
    beta_hat: f64,
    alpha_t: f64,
    dim: usize,
    variant: ConstantVariant,
) -> Result<(LossValue, f64)> {
    let a = check_step_scales(beta_hat, alpha_t)?;
    let b = beta_hat;
    let d = dim as f64;
    let gap = a - b;
    let q = (a * dots.true_sq - 2.0 * b * dots.cross + b * b / a * dots.pred_sq).max(0.0);
    let dq = -2.0 * dots.cross + 2.0 * b * dots.pred_sq / a;
    let quadratic = q / (2.0 * gap);
    let constant = c_t_unchecked(b, a, d, variant);
    let dquad = dq / (2.0 * gap) + q / (2.0 * gap * gap);
    let dconst = match variant {
        ConstantVariant::Oracle => 0.5 * d * (1.0 / a - 1.0 / b),
        ConstantVariant::QuarterLog => -0.25 / b + 0.5 * d / a,
    };
    let loss = LossValue::split(vec![("quadratic", quadratic), ("constant", constant)]);
    if !loss.value.is_finite() {
        return Err(Error::NonFinite("step loss"));
    }
    Ok((loss, dquad + dconst))
}

/// The per-step ELBO term with `β̂` substituted for the training scale,
/// `b / (2(a − b)) ‖ε − ε̂‖²`, and its derivative in `b`. It only grows
/// with `b`, so minimizing it drives the predicted scale toward zero.
pub fn l_elbo_reparam_with_grad(dots: &NoiseDots, beta_hat: f64, alpha_t: f64) -> Result<(LossValue, f64)> {
    let a = check_step_scales(beta_hat, alpha_t)?;
    let e = dots.diff_sq();
    let gap = a - beta_hat;
    let value = beta_hat / (2.0 * gap) * e;
    let grad = a / (2.0 * gap * gap) * e;
    Ok((
        LossValue::split(vec![("quadratic", value), ("constant", 0.0)]),
        grad,
    ))
}

/// `(ln(1 − α²) − ln(1 − α̂²))²`.
pub fn l_ne(alpha_true: f64, alpha_pred: f64) -> Result<LossValue> {
    crate::error::check_open_unit("alpha_true", alpha_true)?;
    crate::error::check_open_unit("alpha_pred", alpha_pred)?;
    let r = log_noise_var(alpha_true) - log_noise_var(alpha_pred);
    Ok(LossValue::plain(r * r))
}

/// `ln(1 − α²)`, computed without cancellation near `α = 0`.
pub fn log_noise_var(alpha: f64) -> f64 {
    (-alpha * alpha).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{ddpm_reverse_gaussian, forward_marginal_sample, forward_posterior, DiffusionStep};
    use crate::numerics::{gaussian_sample, kl_isotropic_gaussians, GaussianParams, RngState};

    fn v(x: &[f64]) -> DenseTensor {
        DenseTensor::vector(x.to_vec()).unwrap()
    }

    #[test]
    fn ddpm_examples() {
        assert_eq!(l_ddpm(&v(&[0.3, 1.0]), &v(&[0.3, 1.0])).unwrap().value, 0.0);
        assert_eq!(l_ddpm(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap().value, 1.0);
        let mut rng = RngState::new(1);
        let a = gaussian_sample(&mut rng, &[8]).unwrap();
        let b = gaussian_sample(&mut rng, &[8]).unwrap();
        let mut naive = 0.0;
        for i in 0..8 {
            naive += (a.data()[i] - b.data()[i]).powi(2);
        }
        assert!((l_ddpm(&a, &b).unwrap().value - naive).abs() < 1e-12);
        assert!(l_ddpm(&a, &v(&[1.0])).is_err());
    }

    #[test]
    fn score_examples() {
        let e = v(&[0.4]);
        assert_eq!(l_score_simplified(&e, &e, 0.19, 0.81).unwrap().value, 0.0);
        let l = l_score_simplified(&v(&[1.0]), &v(&[0.0]), 0.19, 0.81).unwrap().value;
        assert!((l - 0.19 / (2.0 * 0.1539)).abs() < 1e-12);
        assert!((l - 0.617283).abs() < 1e-6);
        assert!(matches!(l_score_simplified(&e, &e, 0.5, 0.9), Err(Error::InconsistentScales(_))));
    }

    #[test]
    fn r_theta_examples() {
        let e = v(&[0.2]);
        let r = r_theta(&e, &e, 0.01, 1).unwrap();
        assert!((r.value - 0.5 * (2.0 * std::f64::consts::PI * 0.01).ln()).abs() < 1e-12);
        assert!((r.value + 1.383647).abs() < 1e-6);
        let r = r_theta(&v(&[1.0]), &v(&[0.0]), 0.5, 0).unwrap();
        assert_eq!(r.component("quadratic"), Some(1.0));
    }

    #[test]
    fn constant_examples() {
        let alpha = 0.8;
        let o = c_t(0.09, alpha, 1, ConstantVariant::Oracle).unwrap();
        assert!((o - (0.5 * 4f64.ln() - 0.375)).abs() < 1e-12);
        assert!((o - 0.318147).abs() < 1e-6);
        let p = c_t(0.09, alpha, 1, ConstantVariant::QuarterLog).unwrap();
        assert!((p - (0.25 * 4f64.ln() - 0.375)).abs() < 1e-12);
        assert!((p + 0.028426).abs() < 1e-6);
        assert!(c_t(1.0 - alpha * alpha, alpha, 1, ConstantVariant::Oracle).is_err());
    }

    #[test]
    fn step_examples() {
        let z = v(&[0.0]);
        let l = l_step(&z, &z, 0.09, 0.8, 1, ConstantVariant::Oracle).unwrap();
        assert_eq!(l.component("quadratic"), Some(0.0));
        assert_eq!(l.value, c_t(0.09, 0.8, 1, ConstantVariant::Oracle).unwrap());
        let l = l_step(&v(&[1.0]), &z, 0.09, 0.8, 1, ConstantVariant::QuarterLog).unwrap();
        assert!((l.component("quadratic").unwrap() - 0.36 / 0.54).abs() < 1e-12);
    }

    #[test]
    fn ne_examples() {
        assert_eq!(l_ne(0.3, 0.3).unwrap().value, 0.0);
        let l = l_ne(0.6, 0.8).unwrap().value;
        assert!((l - (0.64f64.ln() - 0.36f64.ln()).powi(2)).abs() < 1e-12);
        assert!((l - 0.331044).abs() < 1e-6);
        assert_eq!(l, l_ne(0.8, 0.6).unwrap().value);
        assert!(l_ne(1.0, 0.5).is_err());
    }

    fn random_config(rng: &mut RngState) -> (usize, f64, f64, f64) {
        let d = 1 + rng.below(6);
        let a_prev = 0.05 + 0.9 * rng.uniform();
        let beta = 0.001 + 0.95 * rng.uniform();
        (d, a_prev, beta, a_prev * (1.0 - beta).sqrt())
    }

    #[test]
    fn score_loss_is_the_posterior_kl() {
        let mut rng = RngState::new(2);
        for _ in 0..1000 {
            let (d, a_prev, beta, alpha) = random_config(&mut rng);
            let step = DiffusionStep::new(2, beta, alpha, a_prev).unwrap();
            let x0 = gaussian_sample(&mut rng, &[d]).unwrap();
            let e = gaussian_sample(&mut rng, &[d]).unwrap();
            let h = gaussian_sample(&mut rng, &[d]).unwrap();
            let xt = forward_marginal_sample(&x0, alpha, &e).unwrap();
            let p = ddpm_reverse_gaussian(&xt, &h, &step).unwrap();
            let q = forward_posterior(&x0, &xt, &step).unwrap();
            let kl = kl_isotropic_gaussians(&p, &q).unwrap();
            let l = l_score_simplified(&e, &h, beta, alpha).unwrap().value;
            assert!((kl - l).abs() <= 1e-10 * (1.0 + kl.abs()), "{kl} vs {l}");
            let ratio = l / l_ddpm(&e, &h).unwrap().value;
            assert!((ratio - score_weight(beta, alpha).unwrap()).abs() <= 1e-15 * ratio);
        }
    }

    #[test]
    fn oracle_step_loss_is_a_kl() {
        let mut rng = RngState::new(3);
        for _ in 0..1000 {
            let d = 1 + rng.below(6);
            let alpha = 0.02 + 0.96 * rng.uniform();
            let a = 1.0 - alpha * alpha;
            let b = a * (0.001 + 0.998 * rng.uniform());
            let x0 = gaussian_sample(&mut rng, &[d]).unwrap();
            let e = gaussian_sample(&mut rng, &[d]).unwrap();
            let h = gaussian_sample(&mut rng, &[d]).unwrap();
            let xt = forward_marginal_sample(&x0, alpha, &e).unwrap();
            let prev = alpha / (1.0 - b).sqrt();
            let step = DiffusionStep::new(2, b, alpha, prev).unwrap();
            let p = ddpm_reverse_gaussian(&xt, &h, &step).unwrap();
            let q = GaussianParams::new(x0.scale(prev).unwrap(), 1.0 - prev * prev).unwrap();
            let kl = kl_isotropic_gaussians(&p, &q).unwrap();
            let oracle = l_step(&e, &h, b, alpha, d, ConstantVariant::Oracle).unwrap();
            assert!((kl - oracle.value).abs() <= 1e-10 * (1.0 + kl.abs()), "{kl} vs {}", oracle.value);
            assert!(oracle.value >= -1e-12);
            let quarter = l_step(&e, &h, b, alpha, d, ConstantVariant::QuarterLog).unwrap();
            assert_eq!(quarter.component("quadratic"), oracle.component("quadratic"));
            let gap = oracle.component("constant").unwrap() - quarter.component("constant").unwrap();
            let want = (0.5 * d as f64 - 0.25) * (a / b).ln();
            assert!((gap - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn step_gradient_matches_differences() {
        let mut rng = RngState::new(4);
        for trial in 0..200 {
            let d = 1 + trial % 4;
            let alpha = 0.05 + 0.9 * rng.uniform();
            let a = 1.0 - alpha * alpha;
            let b = a * (0.05 + 0.9 * rng.uniform());
            let e: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let h: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let dots = NoiseDots::new(&e, &h);
            let step = 1e-6 * b;
            for variant in [ConstantVariant::Oracle, ConstantVariant::QuarterLog] {
                let (_, g) = l_step_with_grad(&dots, b, alpha, d, variant).unwrap();
                let lp = l_step_with_grad(&dots, b + step, alpha, d, variant).unwrap().0.value;
                let lm = l_step_with_grad(&dots, b - step, alpha, d, variant).unwrap().0.value;
                let fd = (lp - lm) / (2.0 * step);
                assert!((fd - g).abs() <= 1e-5 * g.abs().max(1.0), "{fd} vs {g}");
            }
            let (_, g) = l_elbo_reparam_with_grad(&dots, b, alpha).unwrap();
            let lp = l_elbo_reparam_with_grad(&dots, b + step, alpha).unwrap().0.value;
            let lm = l_elbo_reparam_with_grad(&dots, b - step, alpha).unwrap().0.value;
            assert!(((lp - lm) / (2.0 * step) - g).abs() <= 1e-5 * g.abs().max(1.0));
            assert!(g >= 0.0);
        }
    }
}
