//! Training loops for the noise predictor and the noise-scale predictor.

use std::fmt::Write as _;

use crate::diffusion::forward_marginal_rows;
use crate::error::{Error, Result};
use crate::losses::{l_elbo_reparam_with_grad, l_step_with_grad, ConstantVariant, NoiseDots};
use crate::nn::{AdamConfig, AdamState, EpsModel, Gradients, SchedulingNet, ScoreNet};
use crate::numerics::tensor::fmt_f64;
use crate::numerics::{DenseTensor, RngState};
use crate::schedule::{beta_upper_bound, linear_schedule, NoiseSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Length `T` of the training schedule.
    pub steps: usize,
    /// Largest training noise scale `β_T`.
    pub eps: f64,
    /// Skip factor between the sampled step and its noisier partner.
    pub tau: usize,
    pub batch: usize,
    pub score_iters: usize,
    pub schedule_iters: usize,
    pub score_lr: f64,
    /// Anneal the noise-predictor step size linearly to zero.
    pub score_lr_decay: bool,
    pub schedule_lr: f64,
    pub variant: ConstantVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            eps: 0.9,
            tau: 20,
            batch: 64,
            score_iters: 20_000,
            schedule_iters: 10_000,
            score_lr: 1e-3,
            score_lr_decay: true,
            schedule_lr: 1e-3,
            variant: ConstantVariant::Oracle,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Invalid("training schedule needs T >= 2".into()));
        }
        if self.tau == 0 || self.tau >= self.steps {
            return Err(Error::Invalid(format!("tau = {} outside 1..T", self.tau)));
        }
        if self.batch == 0 {
            return Err(Error::Invalid("batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.steps, self.eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub quadratic: f64,
    pub constant: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,quadratic,constant\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.iteration,
                fmt_f64(r.loss),
                fmt_f64(r.quadratic),
                fmt_f64(r.constant)
            )
            .unwrap();
        }
        out
    }

    /// Mean loss over the last `n` iterations.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(n)..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
    }
}

pub(crate) fn draw_rows(data: &DenseTensor, batch: usize, rng: &mut RngState) -> Result<DenseTensor> {
    let idx: Vec<usize> = (0..batch).map(|_| rng.below(data.rows())).collect();
    data.select_rows(&idx)
}

pub(crate) fn normals(rng: &mut RngState, rows: usize, cols: usize) -> Result<DenseTensor> {
    let mut v = vec![0.0; rows * cols];
    rng.fill_normal(&mut v);
    DenseTensor::new(vec![rows, cols], v)
}

/// Fits the noise predictor: each iteration draws a batch of training
/// rows, one uniform step per row, and minimizes the mean squared noise
/// error.
pub fn train_score(
    mut net: ScoreNet,
    data: &DenseTensor,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(ScoreNet, LossTrace)> {
    cfg.validate()?;
    let d = data.cols();
    if d != net.dim() {
        return Err(Error::ShapeMismatch(format!(
            "data dimension {d}, network expects {}",
            net.dim()
        )));
    }
    let mut opt = AdamState::for_model(
        AdamConfig {
            lr: cfg.score_lr,
            ..AdamConfig::default()
        },
        &net.mlp,
    );
    let mut trace = LossTrace::default();
    let b = cfg.batch;
    for iteration in 0..cfg.score_iters {
        if cfg.score_lr_decay {
            opt.set_lr(cfg.score_lr * (1.0 - iteration as f64 / cfg.score_iters as f64));
        }
        let x0 = draw_rows(data, b, rng)?;
        let alphas: Vec<f64> = (0..b)
            .map(|_| schedule.alpha(rng.range_inclusive(1, schedule.len())))
            .collect();
        let eps = normals(rng, b, d)?;
        let xt = forward_marginal_rows(&x0, &alphas, &eps)?;
        let (pred, tape) = net.mlp.forward(&xt, Some(&alphas))?;
        let diff = pred.sub(&eps)?;
        let loss = diff.norm_sq() / b as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("iteration {iteration}: loss {loss}")));
        }
        let dy = diff.scale(2.0 / b as f64)?;
        let grads = net.mlp.backward(&tape, &dy)?;
        opt.step(&mut net.mlp, &grads)?;
        trace.rows.push(TraceRow {
            iteration,
            loss,
            quadratic: loss,
            constant: 0.0,
        });
    }
    Ok((net, trace))
}

/// Draws one candidate for the noise scale one inference step noisier:
/// `1 − (α_{t+τ}/α_t)²` with `t` uniform on `2..=T−τ`.
pub fn sample_beta_next(schedule: &NoiseSchedule, tau: usize, rng: &mut RngState) -> Result<(f64, usize)> {
    let steps = schedule.len();
    if tau == 0 || tau + 2 > steps {
        return Err(Error::SkipFactorTooLarge { tau, steps });
    }
    let t = rng.range_inclusive(2, steps - tau);
    let r = schedule.alpha(t + tau) / schedule.alpha(t);
    Ok((1.0 - r * r, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleObjective {
    /// The step loss with the chosen constant.
    Step(ConstantVariant),
    /// The per-step ELBO term with the candidate scale substituted. Kept
    /// as a contrast: its minimizer is a zero scale.
    ElboReparam,
}

/// A fixed batch of scheduling-network inputs with everything that does
/// not depend on the scheduling network precomputed.
#[derive(Debug, Clone)]
pub struct ScheduleBatch {
    pub x_t: DenseTensor,
    pub alphas: Vec<f64>,
    pub bounds: Vec<f64>,
    pub dots: Vec<NoiseDots>,
}

/// Draws `batch` admissible rows, rejecting sampled pairs whose scales are
/// inconsistent (`α_t² ≥ 1 − β̂_{n+1}`). Returns the batch and the number
/// of rejected draws.
pub fn draw_schedule_batch(
    score: &dyn EpsModel,
    data: &DenseTensor,
    schedule: &NoiseSchedule,
    tau: usize,
    batch: usize,
    rng: &mut RngState,
) -> Result<(ScheduleBatch, usize)> {
    let d = data.cols();
    let mut alphas = Vec::with_capacity(batch);
    let mut bounds = Vec::with_capacity(batch);
    let mut skipped = 0;
    while alphas.len() < batch {
        let (beta_next, t) = sample_beta_next(schedule, tau, rng)?;
        let a = schedule.alpha(t);
        match beta_upper_bound(a, beta_next) {
            Ok(bound) => {
                alphas.push(a);
                bounds.push(bound);
            }
            Err(Error::InconsistentScales(_)) => {
                skipped += 1;
                if skipped > 1000 * batch {
                    return Err(Error::Invalid(
                        "almost no sampled step pairs have consistent scales".into(),
                    ));
                }
            }
            Err(e) => return Err(e),
        }
    }
    let x0 = draw_rows(data, batch, rng)?;
    let eps = normals(rng, batch, d)?;
    let x_t = forward_marginal_rows(&x0, &alphas, &eps)?;
    let eps_hat = score.predict_eps(&x_t, &alphas)?;
    let dots = eps
        .iter_rows()
        .zip(eps_hat.iter_rows())
        .map(|(e, h)| NoiseDots::new(e, h))
        .collect();
    Ok((
        ScheduleBatch {
            x_t,
            alphas,
            bounds,
            dots,
        },
        skipped,
    ))
}

#[derive(Debug, Clone)]
pub struct ScheduleEval {
    pub loss: f64,
    pub quadratic: f64,
    pub constant: f64,
    pub sigmas: Vec<f64>,
    pub grads: Gradients,
}

/// Batch-mean objective and its parameter gradient, through
/// `β̂ = bound · σ(x_t)`.
pub fn schedule_objective(
    net: &SchedulingNet,
    batch: &ScheduleBatch,
    objective: ScheduleObjective,
) -> Result<ScheduleEval> {
    let (sigmas, tape) = net.forward(&batch.x_t)?;
    let dim = batch.x_t.cols();
    let n = sigmas.len() as f64;
    let mut dsigma = Vec::with_capacity(sigmas.len());
    let (mut loss, mut quad, mut cons) = (0.0, 0.0, 0.0);
    for i in 0..sigmas.len() {
        let beta_hat = batch.bounds[i] * sigmas[i];
        let (l, g) = match objective {
            ScheduleObjective::Step(v) => l_step_with_grad(&batch.dots[i], beta_hat, batch.alphas[i], dim, v)?,
            ScheduleObjective::ElboReparam => l_elbo_reparam_with_grad(&batch.dots[i], beta_hat, batch.alphas[i])?,
        };
        loss += l.value / n;
        quad += l.component("quadratic").unwrap_or(0.0) / n;
        cons += l.component("constant").unwrap_or(0.0) / n;
        dsigma.push(g * batch.bounds[i] / n);
    }
    let grads = net.backward(&tape, &dsigma)?;
    Ok(ScheduleEval {
        loss,
        quadratic: quad,
        constant: cons,
        sigmas,
        grads,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ScheduleTrace {
    pub losses: LossTrace,
    pub sigma_min: Vec<f64>,
    pub sigma_mean: Vec<f64>,
    pub skipped: usize,
}

impl ScheduleTrace {
    /// Smallest ratio output over the last `n` iterations.
    pub fn tail_min_sigma(&self, n: usize) -> f64 {
        let s = &self.sigma_min[self.sigma_min.len().saturating_sub(n)..];
        s.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Average ratio output over the last `n` iterations.
    pub fn tail_mean_sigma(&self, n: usize) -> f64 {
        let s = &self.sigma_mean[self.sigma_mean.len().saturating_sub(n)..];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

/// Fits the noise-scale predictor against a frozen noise predictor.
pub fn train_schedule(
    score: &dyn EpsModel,
    mut net: SchedulingNet,
    data: &DenseTensor,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    objective: ScheduleObjective,
    rng: &mut RngState,
) -> Result<(SchedulingNet, ScheduleTrace)> {
    cfg.validate()?;
    if data.cols() != score.dim() || data.cols() != net.mlp.input_dim() {
        return Err(Error::ShapeMismatch("data, score and scheduling dimensions differ".into()));
    }
    let mut opt = AdamState::for_model(
        AdamConfig {
            lr: cfg.schedule_lr,
            ..AdamConfig::default()
        },
        &net.mlp,
    );
    let mut trace = ScheduleTrace::default();
    for iteration in 0..cfg.schedule_iters {
        let (batch, skipped) = draw_schedule_batch(score, data, schedule, cfg.tau, cfg.batch, rng)?;
        trace.skipped += skipped;
        let eval = schedule_objective(&net, &batch, objective)?;
        if !eval.loss.is_finite() {
            return Err(Error::Diverged(format!("iteration {iteration}: loss {}", eval.loss)));
        }
        opt.step(&mut net.mlp, &eval.grads)?;
        trace.losses.rows.push(TraceRow {
            iteration,
            loss: eval.loss,
            quadratic: eval.quadratic,
            constant: eval.constant,
        });
        trace.sigma_min.push(eval.sigmas.iter().cloned().fold(f64::INFINITY, f64::min));
        trace
            .sigma_mean
            .push(eval.sigmas.iter().sum::<f64>() / eval.sigmas.len() as f64);
    }
    Ok((net, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::AnalyticScoreModel;
    use crate::numerics::gaussian_sample;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            steps: 100,
            tau: 5,
            batch: 16,
            score_iters: 30,
            schedule_iters: 30,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_leave_models_unchanged() {
        let mut rng = RngState::new(1);
        let data = gaussian_sample(&mut rng, &[50, 2]).unwrap();
        let cfg = TrainConfig {
            score_iters: 0,
            schedule_iters: 0,
            ..small_cfg()
        };
        let sched = cfg.schedule().unwrap();
        let net = ScoreNet::new(2, &[8], &mut rng).unwrap();
        let (out, trace) = train_score(net.clone(), &data, &sched, &cfg, &mut rng).unwrap();
        assert_eq!(out, net);
        assert!(trace.rows.is_empty());
        let oracle = AnalyticScoreModel::new(vec![0.0, 0.0], 1.0).unwrap();
        let snet = SchedulingNet::new(2, &[8], &mut rng).unwrap();
        let obj = ScheduleObjective::Step(ConstantVariant::Oracle);
        let (out, _) = train_schedule(&oracle, snet.clone(), &data, &sched, &cfg, obj, &mut rng).unwrap();
        assert_eq!(out, snet);
    }

    #[test]
    fn same_seed_same_trace() {
        let run = || {
            let mut rng = RngState::new(7);
            let data = gaussian_sample(&mut rng.derive(1), &[64, 2]).unwrap();
            let cfg = small_cfg();
            let net = ScoreNet::new(2, &[16, 16], &mut rng).unwrap();
            train_score(net, &data, &cfg.schedule().unwrap(), &cfg, &mut rng).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        assert!(ta.to_csv().starts_with("iteration,loss,quadratic,constant\n0,"));
    }

    #[test]
    fn beta_next_candidates() {
        let s = linear_schedule(4, 0.4).unwrap();
        let mut rng = RngState::new(3);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            let (b, t) = sample_beta_next(&s, 1, &mut rng).unwrap();
            assert!((b - s.beta(t + 1)).abs() < 1e-12);
            seen.insert(t);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![2, 3]);
        let (b, t) = sample_beta_next(&s, 2, &mut rng).unwrap();
        assert_eq!(t, 2);
        assert!((b - (1.0 - (s.alpha(4) / s.alpha(2)).powi(2))).abs() < 1e-15);
        assert!(matches!(sample_beta_next(&s, 3, &mut rng), Err(Error::SkipFactorTooLarge { .. })));
    }

    #[test]
    fn unit_skip_candidates_are_the_training_scales() {
        let s = linear_schedule(50, 0.9).unwrap();
        for t in 2..=49 {
            let r = s.alpha(t + 1) / s.alpha(t);
            assert!((1.0 - r * r - s.beta(t + 1)).abs() < 1e-12);
        }
        let mut rng = RngState::new(4);
        for _ in 0..500 {
            let (b, _) = sample_beta_next(&s, 7, &mut rng).unwrap();
            assert!(b > 0.0 && b < 1.0);
        }
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let mut rng = RngState::new(5);
        let data = gaussian_sample(&mut rng, &[40, 2]).unwrap();
        let sched = linear_schedule(200, 0.9).unwrap();
        let oracle = AnalyticScoreModel::new(vec![0.3, -0.2], 0.8).unwrap();
        let (batch, _) = draw_schedule_batch(&oracle, &data, &sched, 10, 8, &mut rng).unwrap();
        for objective in [
            ScheduleObjective::Step(ConstantVariant::Oracle),
            ScheduleObjective::Step(ConstantVariant::QuarterLog),
            ScheduleObjective::ElboReparam,
        ] {
            let mut net = SchedulingNet::new(2, &[6, 5], &mut rng).unwrap();
            let eval = schedule_objective(&net, &batch, objective).unwrap();
            let h = 1e-6;
            for k in 0..net.mlp.num_params() {
                let orig = net.mlp.params()[k];
                net.mlp.params_mut()[k] = orig + h;
                let lp = schedule_objective(&net, &batch, objective).unwrap().loss;
                net.mlp.params_mut()[k] = orig - h;
                let lm = schedule_objective(&net, &batch, objective).unwrap().loss;
                net.mlp.params_mut()[k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let g = eval.grads.params[k];
                assert!((fd - g).abs() <= 1e-5 * fd.abs().max(g.abs()).max(1e-3), "{objective:?} {k}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn scheduling_training_leaves_score_untouched() {
        let mut rng = RngState::new(6);
        let data = gaussian_sample(&mut rng, &[64, 2]).unwrap();
        let cfg = small_cfg();
        let sched = cfg.schedule().unwrap();
        let score = ScoreNet::new(2, &[8], &mut rng).unwrap();
        let before: Vec<u64> = score.mlp.params().iter().map(|p| p.to_bits()).collect();
        let snet = SchedulingNet::new(2, &[8], &mut rng).unwrap();
        let (_, trace) = train_schedule(&score, snet, &data, &sched, &cfg,
            ScheduleObjective::Step(ConstantVariant::Oracle), &mut rng).unwrap();
        let after: Vec<u64> = score.mlp.params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(before, after);
        assert!(trace.sigma_min.iter().all(|&s| s > 0.0 && s < 1.0));
        assert_eq!(trace.losses.rows.len(), 30);
    }
}
