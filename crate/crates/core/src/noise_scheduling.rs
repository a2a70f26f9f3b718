//! Inference phase one: turning a trained noise-scale predictor into a
//! concrete short schedule, and the two grid searches around it.

use std::fmt::Write as _;

use crate::diffusion::{ddpm_reverse_step, sample, DiffusionStep, ReverseKind};
use crate::error::{Error, Result};
use crate::evaluation::energy_distance;
use crate::nn::{EpsModel, NoiseScaleModel};
use crate::numerics::tensor::fmt_f64;
use crate::numerics::{gaussian_sample, DenseTensor, RngState};
use crate::schedule::{beta_upper_bound, validate_for_sampling, InferenceSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingRun {
    pub init: (f64, f64),
    pub max_steps: usize,
    pub threshold: f64,
    pub schedule: InferenceSchedule,
    /// Ratio outputs in the order they were produced (noisiest first).
    pub sigmas: Vec<f64>,
}

/// Predicts a schedule backward from `init = (α̂_N, β̂_N)`.
///
/// Starting from white noise over `chains` rows, each round takes one
/// reverse step with the current scales (noise injected), then sets the
/// next-cleaner scale to `bound · σ(x)`, with `σ` averaged over rows.
/// Stops after `max_steps` scales or once a candidate falls below
/// `threshold`.
pub fn predict_schedule(
    score: &dyn EpsModel,
    sched: &dyn NoiseScaleModel,
    init: (f64, f64),
    max_steps: usize,
    threshold: f64,
    chains: usize,
    rng: &mut RngState,
) -> Result<SchedulingRun> {
    let (alpha_n, beta_n) = init;
    crate::error::check_open_unit("alpha_N", alpha_n)?;
    crate::error::check_open_unit("beta_N", beta_n)?;
    if alpha_n * alpha_n >= 1.0 - beta_n {
        return Err(Error::InconsistentScales(format!(
            "alpha_N^2 = {} >= 1 - beta_N = {}",
            alpha_n * alpha_n,
            1.0 - beta_n
        )));
    }
    if max_steps == 0 || chains == 0 {
        return Err(Error::Invalid("need at least one step and one chain".into()));
    }
    if beta_n < threshold {
        return Err(Error::DegenerateInit);
    }
    let mut betas = vec![beta_n];
    let mut sigmas = Vec::new();
    let (mut alpha, mut beta) = (alpha_n, beta_n);
    let mut x = gaussian_sample(rng, &[chains, score.dim()])?;
    while betas.len() < max_steps {
        let alpha_prev = alpha / (1.0 - beta).sqrt();
        let step = DiffusionStep::new(betas.len(), beta, alpha, alpha_prev)?;
        let eps_hat = score.predict_eps(&x, &vec![alpha; chains])?;
        let z = gaussian_sample(rng, x.shape())?;
        x = ddpm_reverse_step(&x, &eps_hat, &step, &z)?;
        let bound = beta_upper_bound(alpha, beta)?;
        let s = sched.sigma_pooled(&x)?;
        sigmas.push(s);
        let next = bound * s;
        if next < threshold {
            break;
        }
        betas.push(next);
        alpha = alpha_prev;
        beta = next;
    }
    betas.reverse();
    Ok(SchedulingRun {
        init,
        max_steps,
        threshold,
        schedule: InferenceSchedule::from_backward(betas, alpha_n)?,
        sigmas,
    })
}

/// Sample-quality settings shared by the searches.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Generated samples per evaluated schedule.
    pub samples: usize,
    pub kind: ReverseKind,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            samples: 512,
            kind: ReverseKind::Ddpm,
        }
    }
}

/// Energy distance between samples drawn under `schedule` and `reference`.
pub fn schedule_metric(
    score: &dyn EpsModel,
    schedule: &InferenceSchedule,
    reference: &DenseTensor,
    metric: &MetricConfig,
    rng: &mut RngState,
) -> Result<f64> {
    let generated = sample(score, schedule, metric.samples, rng, metric.kind)?;
    energy_distance(&generated, reference)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Grid bins per axis; candidates are `(0.1 i, 0.1 j)` for `i, j ≤ M`.
    pub bins: usize,
    pub max_steps: usize,
    pub threshold: f64,
    pub chains: usize,
    pub metric: MetricConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRow {
    pub alpha_n: f64,
    pub beta_n: f64,
    pub steps: usize,
    pub metric: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: SchedulingRun,
    pub best_metric: f64,
    pub rows: Vec<SearchRow>,
}

impl SearchResult {
    pub fn evaluated(&self) -> usize {
        self.rows.iter().filter(|r| !r.skipped).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha_N,beta_N,steps,metric,skipped\n");
        for r in &self.rows {
            let metric = if r.skipped { "nan".to_string() } else { fmt_f64(r.metric) };
            writeln!(out, "{},{},{},{},{}", r.alpha_n, r.beta_n, r.steps, metric, r.skipped).unwrap();
        }
        out
    }
}

/// Per-candidate randomness, independent of evaluation order.
fn candidate_rng(seed: u64, path: &[u64]) -> RngState {
    RngState::new(seed).derive_path(path)
}

fn grid_value(i: usize) -> f64 {
    i as f64 / 10.0
}

/// Searches the `M × M` grid of initial pairs. Pairs with inconsistent
/// scales, or whose first candidate is already below the threshold, are
/// recorded as skipped and never evaluated. Ties on the metric go to the
/// shorter schedule, then to the earlier grid index.
pub fn search_init(
    score: &dyn EpsModel,
    sched: &dyn NoiseScaleModel,
    validation: &DenseTensor,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    if cfg.bins == 0 || cfg.bins > 9 {
        return Err(Error::Invalid(format!("grid bins {} outside 1..=9", cfg.bins)));
    }
    let pairs: Vec<(usize, usize)> = (1..=cfg.bins)
        .flat_map(|i| (1..=cfg.bins).map(move |j| (i, j)))
        .collect();
    let eval = |&(i, j): &(usize, usize)| -> Result<Option<(SchedulingRun, f64)>> {
        let (a, b) = (grid_value(i), grid_value(j));
        if a * a >= 1.0 - b || b < cfg.threshold {
            return Ok(None);
        }
        let mut rng = candidate_rng(cfg.seed, &[i as u64, j as u64]);
        let run = predict_schedule(score, sched, (a, b), cfg.max_steps, cfg.threshold, cfg.chains, &mut rng)?;
        let m = schedule_metric(score, &run.schedule, validation, &cfg.metric, &mut rng)?;
        Ok(Some((run, m)))
    };
    let results = map_candidates(&pairs, eval)?;

    let mut rows = Vec::with_capacity(pairs.len());
    let mut best: Option<(usize, f64, SchedulingRun)> = None;
    for (&(i, j), res) in pairs.iter().zip(results) {
        let (a, b) = (grid_value(i), grid_value(j));
        match res {
            None => rows.push(SearchRow {
                alpha_n: a,
                beta_n: b,
                steps: 0,
                metric: f64::NAN,
                skipped: true,
            }),
            Some((run, m)) => {
                let steps = run.schedule.len();
                rows.push(SearchRow {
                    alpha_n: a,
                    beta_n: b,
                    steps,
                    metric: m,
                    skipped: false,
                });
                let better = match &best {
                    None => true,
                    Some((bs, bm, _)) => m < *bm || (m == *bm && steps < *bs),
                };
                if better {
                    best = Some((steps, m, run));
                }
            }
        }
    }
    let (_, best_metric, best) = best.ok_or_else(|| Error::Invalid("every grid pair was invalid".into()))?;
    Ok(SearchResult {
        best,
        best_metric,
        rows,
    })
}

#[cfg(feature = "parallel")]
fn map_candidates<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_candidates<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    F: Fn(&T) -> Result<R>,
{
    items.iter().map(f).collect()
}

/// Largest step count the exhaustive search accepts.
pub const LEGACY_MAX_STEPS: usize = 6;

/// Magnitude rung for step `n` of `N`: `10^{−6 (N − n + 1) / N}`, so the
/// cleanest step gets `1e−6` and the noisiest `10^{−6/N}`. Each position
/// takes exactly one rung.
pub fn legacy_rung(n: usize, steps: usize) -> f64 {
    10f64.powf(-6.0 * (steps - n + 1) as f64 / steps as f64)
}

#[derive(Debug, Clone)]
pub struct LegacyResult {
    pub best: InferenceSchedule,
    pub best_metric: f64,
    pub evaluated: usize,
}

/// Exhaustive search over `β̂_n = k_n · rung(n)`, `k_n ∈ 1..=9`: `9^N`
/// candidates, each anchored at clean data.
pub fn legacy_grid_search(
    score: &dyn EpsModel,
    steps: usize,
    validation: &DenseTensor,
    metric: &MetricConfig,
    seed: u64,
) -> Result<LegacyResult> {
    if steps > LEGACY_MAX_STEPS {
        return Err(Error::LegacySearchUnscalable(steps));
    }
    if steps == 0 {
        return Err(Error::Invalid("legacy search needs at least one step".into()));
    }
    let total = 9usize.pow(steps as u32);
    let indices: Vec<usize> = (0..total).collect();
    let candidate = |idx: usize| -> Vec<f64> {
        let mut rest = idx;
        (1..=steps)
            .map(|n| {
                let k = rest % 9 + 1;
                rest /= 9;
                k as f64 * legacy_rung(n, steps)
            })
            .collect()
    };
    let eval = |&idx: &usize| -> Result<Option<f64>> {
        let s = InferenceSchedule::from_forward(candidate(idx))?;
        if validate_for_sampling(&s).is_err() {
            return Ok(None);
        }
        let mut rng = candidate_rng(seed, &[idx as u64]);
        schedule_metric(score, &s, validation, metric, &mut rng).map(Some)
    };
    let metrics = map_candidates(&indices, eval)?;
    let mut evaluated = 0;
    let mut best: Option<(usize, f64)> = None;
    for (idx, m) in metrics.into_iter().enumerate() {
        if let Some(m) = m {
            evaluated += 1;
            if best.is_none_or(|(_, bm)| m < bm) {
                best = Some((idx, m));
            }
        }
    }
    let (idx, best_metric) = best.ok_or_else(|| Error::Invalid("no valid legacy candidate".into()))?;
    Ok(LegacyResult {
        best: InferenceSchedule::from_forward(candidate(idx))?,
        best_metric,
        evaluated,
    })
}
