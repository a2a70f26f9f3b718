//! Bound estimators, oracle models, sample-quality metrics and the
//! comparison baselines.

pub mod ablation;
pub mod analytic;
pub mod bench;
pub mod bounds;
pub mod energy;
pub mod gap;
pub mod ne;

pub use analytic::{AnalyticScoreModel, MixtureScoreModel};
pub use bounds::{estimate_bounds, BetaHatSource, BoundOptions, BoundReport};
pub use energy::energy_distance;
pub use gap::{gap_identity_check, GapCheck};
pub use ne::{train_ne_baseline, NoiseEstimator};
pub use bench::{run_bench, BenchConfig, BenchInputs, BenchResult, Method};
pub use ablation::{ablation_direct_beta, AblationConfig};
