//! Sample-quality comparison of schedule families at matched step budgets.
//!
//! Schedules that need fitting (the searches and the direct-scale ablation)
//! are fit once per budget from the base seed; every seed then draws its own
//! samples, scored by energy distance against the test split.

use std::fmt::Write as _;

use crate::diffusion::{sample, ReverseKind};
use crate::error::{Error, Result};
use crate::evaluation::ablation::{ablation_direct_beta, AblationConfig};
use crate::evaluation::energy_distance;
use crate::evaluation::ne::{ne_sample, NoiseEstimator};
use crate::nn::{EpsModel, NoiseScaleModel};
use crate::noise_scheduling::{legacy_grid_search, search_init, MetricConfig, SearchConfig};
use crate::numerics::tensor::fmt_f64;
use crate::numerics::{DenseTensor, RngState};
use crate::schedule::{linear_schedule, InferenceSchedule, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Linear,
    DdimSubsequence,
    Legacy,
    Ne,
    Ablation,
    Bddm,
    LinearReference,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Linear,
        Method::DdimSubsequence,
        Method::Legacy,
        Method::Ne,
        Method::Ablation,
        Method::Bddm,
        Method::LinearReference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::DdimSubsequence => "ddim",
            Self::Legacy => "legacy",
            Self::Ne => "ne",
            Self::Ablation => "ablation",
            Self::Bddm => "bddm",
            Self::LinearReference => "linear-ref",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown benchmark method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub budgets: Vec<usize>,
    pub reference_steps: usize,
    pub legacy_steps: usize,
    pub seeds: Vec<u64>,
    /// Samples drawn per (method, budget, seed).
    pub samples: usize,
    /// Largest scale of the linear step families.
    pub eps: f64,
    /// Search settings; `max_steps` is replaced by each budget.
    pub search: SearchConfig,
    pub ablation: AblationConfig,
    /// Ablation runs only for budgets up to this size.
    pub ablation_max_steps: usize,
}

pub struct BenchInputs<'a> {
    pub score: &'a dyn EpsModel,
    pub sched: &'a dyn NoiseScaleModel,
    pub ne: Option<&'a NoiseEstimator>,
    pub training: &'a NoiseSchedule,
    pub train: &'a DenseTensor,
    pub validation: &'a DenseTensor,
    pub test: &'a DenseTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub steps: usize,
    pub energy_distance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    /// Every schedule that was sampled, by method and budget.
    pub schedules: Vec<(Method, usize, InferenceSchedule)>,
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,steps,energy_distance,seed\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.method.name(), r.steps, fmt_f64(r.energy_distance), r.seed).unwrap();
        }
        out
    }

    /// Median over seeds for one (method, budget), if present.
    pub fn median(&self, method: Method, steps: usize) -> Option<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.steps == steps)
            .map(|r| r.energy_distance)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    }
}

/// Evenly spaced training steps ending at `T`.
pub fn subsequence_steps(total: usize, count: usize) -> Vec<usize> {
    (1..=count).map(|k| (k * total + count / 2) / count).collect()
}

fn forward_linear(steps: usize, eps: f64) -> Result<InferenceSchedule> {
    InferenceSchedule::from_forward(linear_schedule(steps, eps)?.betas().to_vec())
}

enum Arm {
    Schedule(InferenceSchedule, ReverseKind),
    Ne(Vec<f64>),
}

pub fn run_bench(inputs: &BenchInputs, cfg: &BenchConfig) -> Result<BenchResult> {
    if cfg.seeds.is_empty() || cfg.samples == 0 {
        return Err(Error::Invalid("benchmark needs seeds and samples".into()));
    }
    let base = cfg.search.seed;
    let metric = MetricConfig {
        samples: cfg.search.metric.samples,
        kind: cfg.search.metric.kind,
    };
    let mut arms: Vec<(Method, usize, Arm)> = Vec::new();
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    for &method in &methods {
        match method {
            Method::Linear => {
                for &n in &cfg.budgets {
                    arms.push((method, n, Arm::Schedule(forward_linear(n, cfg.eps)?, ReverseKind::Ddpm)));
                }
            }
            Method::LinearReference => {
                let n = cfg.reference_steps;
                arms.push((method, n, Arm::Schedule(forward_linear(n, cfg.eps)?, ReverseKind::Ddpm)));
            }
            Method::DdimSubsequence => {
                for &n in &cfg.budgets {
                    let steps = subsequence_steps(inputs.training.len(), n);
                    let s = InferenceSchedule::from_training_subsequence(inputs.training, &steps)?;
                    arms.push((method, n, Arm::Schedule(s, ReverseKind::Ddim { eta: 0.0 })));
                }
            }
            Method::Legacy => {
                let n = cfg.legacy_steps;
                let r = legacy_grid_search(inputs.score, n, inputs.validation, &metric, base)?;
                arms.push((method, n, Arm::Schedule(r.best, ReverseKind::Ddpm)));
            }
            Method::Ne => {
                if inputs.ne.is_none() {
                    return Err(Error::Invalid("noise-estimator arm needs a trained estimator".into()));
                }
                for &n in &cfg.budgets {
                    arms.push((method, n, Arm::Ne(linear_schedule(n, cfg.eps)?.betas().to_vec())));
                }
            }
            Method::Bddm | Method::Ablation => {}
        }
    }
    // The ablation is anchored at the searched initial noise level, so both
    // come from the same search.
    if methods.contains(&Method::Bddm) || methods.contains(&Method::Ablation) {
        for &n in &cfg.budgets {
            let search = SearchConfig {
                max_steps: n,
                ..cfg.search.clone()
            };
            let found = search_init(inputs.score, inputs.sched, inputs.validation, &search)?;
            if methods.contains(&Method::Bddm) {
                arms.push((Method::Bddm, n, Arm::Schedule(found.best.schedule.clone(), ReverseKind::Ddpm)));
            }
            if methods.contains(&Method::Ablation) && n <= cfg.ablation_max_steps {
                let acfg = AblationConfig {
                    alpha_n: found.best.init.0,
                    ..cfg.ablation
                };
                let mut rng = RngState::new(base).derive_path(&[0xab1a, n as u64]);
                let r = ablation_direct_beta(inputs.score, n, inputs.train, &acfg, &mut rng)?;
                arms.push((Method::Ablation, n, Arm::Schedule(r.schedule, ReverseKind::Ddpm)));
            }
        }
    }
    arms.sort_by_key(|(m, n, _)| (*m, *n));

    let jobs: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let run = |&(a, seed): &(usize, u64)| -> Result<BenchRow> {
        let (method, n, arm) = &arms[a];
        let mut rng = RngState::new(seed).derive_path(&[*method as u64, *n as u64]);
        let x = match arm {
            Arm::Schedule(s, kind) => sample(inputs.score, s, cfg.samples, &mut rng, *kind)?,
            Arm::Ne(betas) => ne_sample(inputs.score, inputs.ne.unwrap(), betas, cfg.samples, &mut rng)?,
        };
        Ok(BenchRow {
            method: *method,
            steps: *n,
            energy_distance: energy_distance(&x, inputs.test)?,
            seed,
        })
    };
    let rows = map_jobs(&jobs, run)?;
    let schedules = arms
        .into_iter()
        .filter_map(|(m, n, arm)| match arm {
            Arm::Schedule(s, _) => Some((m, n, s)),
            Arm::Ne(_) => None,
        })
        .collect();
    Ok(BenchResult { rows, schedules })
}

#[cfg(feature = "parallel")]
fn map_jobs<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_jobs<T, R>(items: &[T], f: impl Fn(&T) -> Result<R>) -> Result<Vec<R>> {
    items.iter().map(f).collect()
}
