//! Flat `key = value` run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use bddm::data::{parse_key_values, DatasetKind, DatasetSpec};
use bddm::diffusion::ReverseKind;
use bddm::evaluation::Method;
use bddm::losses::ConstantVariant;
use bddm::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DatasetSpec,
    pub train: TrainConfig,
    pub score_hidden: Vec<usize>,
    pub sched_hidden: Vec<usize>,
    /// Step budget `N` for schedule prediction.
    pub max_steps: usize,
    /// Search grid bins `M` per axis.
    pub bins: usize,
    /// Stop threshold; defaults to the first training scale.
    pub threshold: f64,
    pub chains: usize,
    pub metric_samples: usize,
    pub reverse: ReverseKind,
    pub sample_count: usize,
    pub bound_points: usize,
    pub mc_samples: usize,
    pub keep_reconstruction: bool,
    pub bench_methods: Vec<Method>,
    pub bench_budgets: Vec<usize>,
    pub bench_reference: usize,
    pub bench_legacy_steps: usize,
    pub bench_seeds: Vec<u64>,
    pub bench_samples: usize,
    pub ne_iters: usize,
    pub ablation_iters: usize,
    pub ablation_max_steps: usize,
}

/// Pulls typed values out of the parsed lines and reports leftovers.
struct Keys(BTreeMap<String, String>);

impl Keys {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key {key}: cannot parse {v:?}: {e}")),
        }
    }

    fn or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<T>().map_err(|e| anyhow!("config key {key}: cannot parse {s:?}: {e}")))
                .collect(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }
}

impl RunConfig {
    pub fn parse(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let mut keys = Keys(parse_key_values(text)?.into_iter().collect());
        let seed = match (seed_override, keys.take::<u64>("seed")?) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => bail!("config needs a seed (key `seed` or --seed)"),
        };

        let kind = DatasetKind::parse(&keys.raw("dataset").unwrap_or_else(|| "gaussian".into()))?;
        let dim = keys.or("dim", 2usize)?;
        let mut data = DatasetSpec::preset(kind, dim, seed)?;
        if kind == DatasetKind::Gaussian {
            if let Some(m) = keys.take::<f64>("data_mean")? {
                data.means = vec![vec![m; dim]];
            }
            data.scales = vec![keys.or("data_scale", data.scales[0])?];
        }
        data.train = keys.or("n_train", data.train)?;
        data.validation = keys.or("n_validation", data.validation)?;
        data.test = keys.or("n_test", data.test)?;
        data.validate()?;

        let d = TrainConfig::default();
        let variant = match keys.raw("variant") {
            Some(v) => ConstantVariant::parse(&v)?,
            None => d.variant,
        };
        let train = TrainConfig {
            steps: keys.or("steps", d.steps)?,
            eps: keys.or("eps", d.eps)?,
            tau: keys.or("tau", d.tau)?,
            batch: keys.or("batch", d.batch)?,
            score_iters: keys.or("score_iters", d.score_iters)?,
            schedule_iters: keys.or("schedule_iters", d.schedule_iters)?,
            score_lr: keys.or("score_lr", d.score_lr)?,
            score_lr_decay: keys.or("score_lr_decay", d.score_lr_decay)?,
            schedule_lr: keys.or("schedule_lr", d.schedule_lr)?,
            variant,
        };
        train.validate()?;
        let threshold = match keys.take::<f64>("threshold")? {
            Some(v) => v,
            None => train.schedule()?.beta(1),
        };
        let reverse = match keys.raw("reverse") {
            Some(v) => ReverseKind::parse(&v)?,
            None => ReverseKind::Ddpm,
        };
        let bench_methods = match keys.raw("bench_methods") {
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Method::parse(s).map_err(anyhow::Error::from))
                .collect::<Result<Vec<_>>>()?,
            None => Method::ALL.to_vec(),
        };

        let cfg = RunConfig {
            seed,
            data,
            train,
            score_hidden: keys.list("score_hidden", vec![128, 128, 128])?,
            sched_hidden: keys.list("sched_hidden", vec![64, 64])?,
            max_steps: keys.or("max_steps", 8)?,
            bins: keys.or("bins", 9)?,
            threshold,
            chains: keys.or("chains", 16)?,
            metric_samples: keys.or("metric_samples", 512)?,
            reverse,
            sample_count: keys.or("sample_count", 1024)?,
            bound_points: keys.or("bound_points", 20)?,
            mc_samples: keys.or("mc_samples", 1000)?,
            keep_reconstruction: keys.or("keep_reconstruction", false)?,
            bench_methods,
            bench_budgets: keys.list("bench_budgets", vec![8, 16])?,
            bench_reference: keys.or("bench_reference", 128)?,
            bench_legacy_steps: keys.or("bench_legacy_steps", 2)?,
            bench_seeds: keys.list("bench_seeds", vec![1, 2, 3, 4, 5])?,
            bench_samples: keys.or("bench_samples", 1024)?,
            ne_iters: keys.or("ne_iters", 5000)?,
            ablation_iters: keys.or("ablation_iters", 200)?,
            ablation_max_steps: keys.or("ablation_max_steps", 8)?,
        };
        if let Some(k) = keys.0.keys().next() {
            bail!("unknown config key {k:?}");
        }
        if cfg.score_hidden.is_empty() || cfg.sched_hidden.is_empty() {
            bail!("hidden layer lists must be non-empty");
        }
        if cfg.max_steps == 0 || cfg.bins == 0 || cfg.chains == 0 || cfg.sample_count == 0 {
            bail!("max_steps, bins, chains and sample_count must be positive");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, seed_override)
    }
}
