//! Full reverse chains driven by the exact predictor land on the data law.

use bddm::diffusion::{sample, ReverseKind};
use bddm::evaluation::AnalyticScoreModel;
use bddm::schedule::{linear_schedule, InferenceSchedule};
use bddm::RngState;

fn moments(x: &bddm::DenseTensor, col: usize) -> (f64, f64) {
    let v: Vec<f64> = x.iter_rows().map(|r| r[col]).collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}

#[test]
fn ddpm_chain_recovers_gaussian_mean() {
    let (mu, s0) = ([1.5, -0.5], 0.6);
    let model = AnalyticScoreModel::new(mu.to_vec(), s0).unwrap();
    // Final scale near 0.007, so the standard-normal start matches the
    // forward marginal to well below the Monte-Carlo error.
    let training = linear_schedule(200, 0.99).unwrap();
    let schedule = InferenceSchedule::from_forward(training.betas().to_vec()).unwrap();
    let n = 10_000;
    let x = sample(&model, &schedule, n, &mut RngState::new(17), ReverseKind::Ddpm).unwrap();
    for (k, want) in mu.iter().enumerate() {
        let (m, var) = moments(&x, k);
        let se = (var / n as f64).sqrt();
        assert!((m - want).abs() < 3.0 * se, "coordinate {k}: mean {m} vs {want} (se {se})");
        assert!(var > 0.5 * s0 * s0 && var < 2.0 * s0 * s0, "variance {var}");
    }
}

#[test]
fn ddim_chain_is_deterministic_given_start() {
    let model = AnalyticScoreModel::new(vec![0.0], 1.0).unwrap();
    let schedule = InferenceSchedule::from_forward(linear_schedule(20, 0.5).unwrap().betas().to_vec()).unwrap();
    let a = sample(&model, &schedule, 100, &mut RngState::new(3), ReverseKind::Ddim { eta: 0.0 }).unwrap();
    let b = sample(&model, &schedule, 100, &mut RngState::new(3), ReverseKind::Ddim { eta: 0.0 }).unwrap();
    assert_eq!(a, b);
}
