//! Pipeline subcommands. Every command reads its inputs from, and writes
//! its outputs into, one run directory:
//!
//! | file | written by |
//! |---|---|
//! | `data/{train,validation,test,spec}.txt` | `gen-data` |
//! | `score.ckpt`, `score_loss.csv` | `train-score` |
//! | `sched.ckpt`, `sched_loss.csv` | `train-schedule` |
//! | `schedule.txt`, `search.csv` | `search` |
//! | `samples.txt` | `sample` |
//! | `bounds.csv`, `bounds.svg` | `eval-bounds` |
//! | `bench.csv`, `bench.svg`, `ne_loss.csv` | `bench` |

pub mod config;
pub mod svg;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bddm::data::{generate, load_dataset, save_dataset, Dataset, DatasetSpec};
use bddm::diffusion::sample as run_sampler;
use bddm::evaluation::bounds::{bounds_csv, spread_steps};
use bddm::evaluation::ne::NeConfig;
use bddm::evaluation::{
    estimate_bounds, run_bench, train_ne_baseline, AblationConfig, BenchConfig, BenchInputs, BetaHatSource,
    BoundOptions, BoundReport, Method, NoiseEstimator,
};
use bddm::nn::{checkpoint, SchedulingNet, ScoreNet};
use bddm::noise_scheduling::{search_init, MetricConfig, SearchConfig};
use bddm::schedule::{validate_for_sampling, InferenceSchedule, NoiseSchedule};
use bddm::training::{train_schedule, train_score, ScheduleObjective};
use bddm::RngState;

pub use config::RunConfig;

/// Per-command stream tags, so commands never share random draws.
mod tag {
    pub const SCORE: u64 = 1;
    pub const SCHED: u64 = 2;
    pub const SAMPLE: u64 = 4;
    pub const BOUNDS: u64 = 5;
    pub const NE: u64 = 6;
}

fn rng_for(cfg: &RunConfig, tag: u64) -> RngState {
    RngState::new(cfg.seed).derive(tag)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("missing {what}: {} (run the earlier pipeline step first)", path.display());
    }
    Ok(())
}

pub fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

pub fn load_data(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let dir = data_dir(out);
    require(&dir.join("spec.txt"), "dataset")?;
    let (spec, data) = load_dataset(&dir)?;
    if spec.dim != cfg.data.dim {
        bail!("dataset has dimension {} but config says {}", spec.dim, cfg.data.dim);
    }
    Ok(data)
}

pub fn load_score(cfg: &RunConfig, out: &Path) -> Result<ScoreNet> {
    let path = out.join("score.ckpt");
    require(&path, "score checkpoint")?;
    let net = ScoreNet::from_mlp(checkpoint::load(&path)?)?;
    if net.mlp.input_dim() != cfg.data.dim {
        bail!("score checkpoint has dimension {}, data has {}", net.mlp.input_dim(), cfg.data.dim);
    }
    Ok(net)
}

pub fn load_sched(cfg: &RunConfig, out: &Path) -> Result<SchedulingNet> {
    let path = out.join("sched.ckpt");
    require(&path, "scheduling checkpoint")?;
    let net = SchedulingNet::from_mlp(checkpoint::load(&path)?)?;
    if net.mlp.input_dim() != cfg.data.dim {
        bail!("scheduling checkpoint has dimension {}, data has {}", net.mlp.input_dim(), cfg.data.dim);
    }
    Ok(net)
}

pub fn search_config(cfg: &RunConfig) -> SearchConfig {
    SearchConfig {
        bins: cfg.bins,
        max_steps: cfg.max_steps,
        threshold: cfg.threshold,
        chains: cfg.chains,
        metric: MetricConfig {
            samples: cfg.metric_samples,
            kind: cfg.reverse,
        },
        seed: cfg.seed,
    }
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    let spec: &DatasetSpec = &cfg.data;
    let data = generate(spec)?;
    save_dataset(&data_dir(out), spec, &data)?;
    Ok(data)
}

/// Trains the noise predictor in memory.
pub fn fit_score(cfg: &RunConfig, data: &Dataset) -> Result<(ScoreNet, bddm::training::LossTrace)> {
    let mut rng = rng_for(cfg, tag::SCORE);
    let net = ScoreNet::new(cfg.data.dim, &cfg.score_hidden, &mut rng)?;
    Ok(train_score(net, &data.train, &cfg.train.schedule()?, &cfg.train, &mut rng)?)
}

pub fn cmd_train_score(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg, out)?;
    let (net, trace) = fit_score(cfg, &data)?;
    checkpoint::save(&net.mlp, &out.join("score.ckpt"))?;
    write(&out.join("score_loss.csv"), &trace.to_csv())
}

/// Trains the noise-scale predictor in memory against a frozen score.
pub fn fit_sched(
    cfg: &RunConfig,
    score: &ScoreNet,
    data: &Dataset,
    objective: ScheduleObjective,
) -> Result<(SchedulingNet, bddm::training::ScheduleTrace)> {
    let mut rng = rng_for(cfg, tag::SCHED);
    let net = SchedulingNet::new(cfg.data.dim, &cfg.sched_hidden, &mut rng)?;
    let schedule = cfg.train.schedule()?;
    Ok(train_schedule(score, net, &data.train, &schedule, &cfg.train, objective, &mut rng)?)
}

pub fn cmd_train_schedule(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg, out)?;
    let score = load_score(cfg, out)?;
    let (net, trace) = fit_sched(cfg, &score, &data, ScheduleObjective::Step(cfg.train.variant))?;
    checkpoint::save(&net.mlp, &out.join("sched.ckpt"))?;
    write(&out.join("sched_loss.csv"), &trace.losses.to_csv())
}

pub fn cmd_search(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg, out)?;
    let score = load_score(cfg, out)?;
    let sched = load_sched(cfg, out)?;
    let result = search_init(&score, &sched, &data.validation, &search_config(cfg))?;
    write(&out.join("schedule.txt"), &result.best.schedule.to_text())?;
    write(&out.join("search.csv"), &result.to_csv())
}

/// Reads and validates a schedule file; nothing is sampled from an
/// invalid one.
pub fn load_schedule(path: &Path) -> Result<InferenceSchedule> {
    require(path, "schedule file")?;
    let text = std::fs::read_to_string(path)?;
    let s = InferenceSchedule::from_text(&text).with_context(|| format!("schedule {}", path.display()))?;
    if let Err(v) = validate_for_sampling(&s) {
        bail!("schedule {} fails validation: {v}", path.display());
    }
    Ok(s)
}

pub fn cmd_sample(cfg: &RunConfig, out: &Path, schedule: Option<&Path>) -> Result<()> {
    let default = out.join("schedule.txt");
    let schedule = load_schedule(schedule.unwrap_or(&default))?;
    let score = load_score(cfg, out)?;
    let mut rng = rng_for(cfg, tag::SAMPLE);
    let x = run_sampler(&score, &schedule, cfg.sample_count, &mut rng, cfg.reverse)?;
    write(&out.join("samples.txt"), &x.to_text())
}

pub fn bound_curves(
    cfg: &RunConfig,
    score: &dyn bddm::nn::EpsModel,
    sched: &SchedulingNet,
    x0: &bddm::DenseTensor,
    schedule: &NoiseSchedule,
) -> Result<Vec<BoundReport>> {
    let opts = BoundOptions {
        mc_samples: cfg.mc_samples,
        keep_reconstruction: cfg.keep_reconstruction,
        variant: cfg.train.variant,
    };
    let source = BetaHatSource::Network { net: sched, tau: cfg.train.tau };
    let base = rng_for(cfg, tag::BOUNDS);
    spread_steps(schedule.len(), cfg.bound_points)
        .into_iter()
        .map(|t| {
            let mut rng = base.derive(t as u64);
            Ok(estimate_bounds(score, &source, x0, schedule, t, &opts, &mut rng)?)
        })
        .collect()
}

pub fn cmd_eval_bounds(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg, out)?;
    let score = load_score(cfg, out)?;
    let sched = load_sched(cfg, out)?;
    let reports = bound_curves(cfg, &score, &sched, &data.test, &cfg.train.schedule()?)?;
    write(&out.join("bounds.csv"), &bounds_csv(&reports))?;
    let curve = |f: fn(&BoundReport) -> f64| reports.iter().map(|r| (r.t as f64, f(r))).collect();
    let chart = svg::line_chart(
        "lower bounds per step",
        "t",
        &[
            svg::Series { name: "F_elbo", color: "#1f77b4", points: curve(|r| r.f_elbo) },
            svg::Series { name: "F_score", color: "#2ca02c", points: curve(|r| r.f_score) },
            svg::Series { name: "F_bddm", color: "#d62728", points: curve(|r| r.f_bddm) },
        ],
    );
    write(&out.join("bounds.svg"), &chart)
}

pub fn bench_config(cfg: &RunConfig) -> BenchConfig {
    BenchConfig {
        methods: cfg.bench_methods.clone(),
        budgets: cfg.bench_budgets.clone(),
        reference_steps: cfg.bench_reference,
        legacy_steps: cfg.bench_legacy_steps,
        seeds: cfg.bench_seeds.clone(),
        samples: cfg.bench_samples,
        eps: cfg.train.eps,
        search: search_config(cfg),
        ablation: AblationConfig {
            iters: cfg.ablation_iters,
            variant: cfg.train.variant,
            ..AblationConfig::default()
        },
        ablation_max_steps: cfg.ablation_max_steps,
    }
}

pub fn fit_ne(cfg: &RunConfig, data: &Dataset) -> Result<(NoiseEstimator, bddm::training::LossTrace)> {
    let mut rng = rng_for(cfg, tag::NE);
    let est = NoiseEstimator::new(cfg.data.dim, &mut rng)?;
    let ne_cfg = NeConfig {
        iters: cfg.ne_iters,
        batch: cfg.train.batch,
        ..NeConfig::default()
    };
    Ok(train_ne_baseline(est, &data.train, &cfg.train.schedule()?, &ne_cfg, &mut rng)?)
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = load_data(cfg, out)?;
    let score = load_score(cfg, out)?;
    let sched = load_sched(cfg, out)?;
    let ne = if cfg.bench_methods.contains(&Method::Ne) {
        let (est, trace) = fit_ne(cfg, &data)?;
        write(&out.join("ne_loss.csv"), &trace.to_csv())?;
        Some(est)
    } else {
        None
    };
    let training = cfg.train.schedule()?;
    let inputs = BenchInputs {
        score: &score,
        sched: &sched,
        ne: ne.as_ref(),
        training: &training,
        train: &data.train,
        validation: &data.validation,
        test: &data.test,
    };
    let result = run_bench(&inputs, &bench_config(cfg))?;
    write(&out.join("bench.csv"), &result.to_csv())?;
    write(&out.join("bench.svg"), &bench_chart(&result))
}

/// Median energy distance per method against the step budget.
fn bench_chart(result: &bddm::evaluation::BenchResult) -> String {
    const COLORS: [&str; 7] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#d62728", "#7f7f7f"];
    let mut series = Vec::new();
    for (k, m) in Method::ALL.iter().enumerate() {
        let mut steps: Vec<usize> = result.rows.iter().filter(|r| r.method == *m).map(|r| r.steps).collect();
        steps.sort_unstable();
        steps.dedup();
        if steps.is_empty() {
            continue;
        }
        let points = steps
            .iter()
            .map(|&n| (n as f64, result.median(*m, n).unwrap()))
            .collect();
        series.push(svg::Series { name: m.name(), color: COLORS[k], points });
    }
    svg::line_chart("median energy distance", "steps", &series)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    TrainScore,
    TrainSchedule,
    Search,
    Sample,
    EvalBounds,
    Bench,
}

pub fn run(command: Command, cfg: &RunConfig, out: &Path, schedule: Option<&Path>) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match command {
        Command::GenData => gen_data(cfg, out).map(|_| ()),
        Command::TrainScore => cmd_train_score(cfg, out),
        Command::TrainSchedule => cmd_train_schedule(cfg, out),
        Command::Search => cmd_search(cfg, out),
        Command::Sample => cmd_sample(cfg, out, schedule),
        Command::EvalBounds => cmd_eval_bounds(cfg, out),
        Command::Bench => cmd_bench(cfg, out),
    }
}
