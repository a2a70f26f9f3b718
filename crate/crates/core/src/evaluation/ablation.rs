//! Ablation: the sampling scales as free parameters instead of network
//! outputs. Each `β̂_n` is a sigmoid times its admissible bound, anchored
//! at a fixed `α̂_N`, and the whole vector is fit to the step loss averaged
//! over positions. Gradients are central differences on a fixed set of
//! draws, which is only affordable for short schedules.

use crate::error::{Error, Result};
use crate::losses::{l_step, ConstantVariant};
use crate::nn::mlp::sigmoid;
use crate::nn::{AdamConfig, AdamState, EpsModel};
use crate::numerics::{gaussian_sample, DenseTensor, RngState};
use crate::schedule::{beta_upper_bound, InferenceSchedule};
use crate::training::draw_rows;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationConfig {
    pub alpha_n: f64,
    pub iters: usize,
    /// Draws per schedule position.
    pub batch: usize,
    /// Initial step size, decayed linearly to zero.
    pub lr: f64,
    pub variant: ConstantVariant,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            alpha_n: 0.1,
            iters: 200,
            batch: 64,
            lr: 0.1,
            variant: ConstantVariant::Oracle,
        }
    }
}

/// Deterministic objective over raw parameters `u`, one per position.
pub struct DirectBetaObjective<'a> {
    score: &'a dyn EpsModel,
    alpha_n: f64,
    x0: Vec<DenseTensor>,
    eps: Vec<DenseTensor>,
    variant: ConstantVariant,
}

impl<'a> DirectBetaObjective<'a> {
    pub fn new(
        score: &'a dyn EpsModel,
        steps: usize,
        data: &DenseTensor,
        cfg: &AblationConfig,
        rng: &mut RngState,
    ) -> Result<Self> {
        crate::error::check_open_unit("alpha_N", cfg.alpha_n)?;
        if steps == 0 || cfg.batch == 0 {
            return Err(Error::Invalid("need at least one step and one draw".into()));
        }
        let mut x0 = Vec::with_capacity(steps);
        let mut eps = Vec::with_capacity(steps);
        for _ in 0..steps {
            x0.push(draw_rows(data, cfg.batch, rng)?);
            eps.push(gaussian_sample(rng, &[cfg.batch, data.cols()])?);
        }
        Ok(Self {
            score,
            alpha_n: cfg.alpha_n,
            x0,
            eps,
            variant: cfg.variant,
        })
    }

    pub fn steps(&self) -> usize {
        self.x0.len()
    }

    /// Scales implied by `u`, clean end first.
    pub fn schedule(&self, u: &[f64]) -> Result<InferenceSchedule> {
        let n = self.steps();
        let mut betas = vec![0.0; n];
        let mut alpha = self.alpha_n;
        betas[n - 1] = (1.0 - alpha * alpha) * sigmoid(u[n - 1]);
        for i in (0..n - 1).rev() {
            let bound = beta_upper_bound(alpha, betas[i + 1])?;
            betas[i] = bound * sigmoid(u[i]);
            alpha /= (1.0 - betas[i + 1]).sqrt();
        }
        InferenceSchedule::from_backward(betas, self.alpha_n)
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        let s = self.schedule(u)?;
        let n = self.steps();
        let mut total = 0.0;
        for pos in 1..=n {
            let (a, b) = (s.alpha_hat(pos), s.beta_hat(pos));
            let x0 = &self.x0[pos - 1];
            let eps = &self.eps[pos - 1];
            let x = x0.lincomb(a, eps, (1.0 - a * a).sqrt())?;
            let eps_hat = self.score.predict_eps(&x, &vec![a; x.rows()])?;
            let mut sum = 0.0;
            for (e, h) in eps.iter_rows().zip(eps_hat.iter_rows()) {
                let e = DenseTensor::vector(e.to_vec())?;
                let h = DenseTensor::vector(h.to_vec())?;
                sum += l_step(&e, &h, b, a, x.cols(), self.variant)?.value;
            }
            total += sum / x.rows() as f64;
        }
        Ok(total / n as f64)
    }

    pub fn gradient(&self, u: &[f64], h: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; u.len()];
        let mut probe = u.to_vec();
        for i in 0..u.len() {
            probe[i] = u[i] + h;
            let up = self.value(&probe)?;
            probe[i] = u[i] - h;
            let down = self.value(&probe)?;
            probe[i] = u[i];
            g[i] = (up - down) / (2.0 * h);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub schedule: InferenceSchedule,
    pub params: Vec<f64>,
    pub losses: Vec<f64>,
}

pub fn ablation_direct_beta(
    score: &dyn EpsModel,
    steps: usize,
    data: &DenseTensor,
    cfg: &AblationConfig,
    rng: &mut RngState,
) -> Result<AblationResult> {
    let obj = DirectBetaObjective::new(score, steps, data, cfg, rng)?;
    optimize(&obj, cfg)
}

pub fn optimize(obj: &DirectBetaObjective, cfg: &AblationConfig) -> Result<AblationResult> {
    let mut u = vec![0.0; obj.steps()];
    let mut opt = AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, u.len());
    let mut losses = Vec::with_capacity(cfg.iters);
    for k in 0..cfg.iters {
        let v = obj.value(&u)?;
        if !v.is_finite() {
            return Err(Error::Diverged(format!("iteration {k}: loss {v}")));
        }
        losses.push(v);
        let g = obj.gradient(&u, 1e-5)?;
        opt.set_lr(cfg.lr * (1.0 - k as f64 / cfg.iters as f64));
        opt.step_slice(&mut u, &g)?;
    }
    Ok(AblationResult {
        schedule: obj.schedule(&u)?,
        params: u,
        losses,
    })
}
