//! Browser bindings: a few cheap operations from the core crate, exposed
//! through wasm-bindgen for the static page in `www/`.

use bddm::data::{sample_law, DatasetSpec};
use bddm::diffusion::{sample, ReverseKind};
use bddm::evaluation::bench::subsequence_steps;
use bddm::schedule::{beta_upper_bound, linear_schedule, InferenceSchedule};
use bddm::RngState;
use wasm_bindgen::prelude::*;

fn js(e: bddm::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Cumulative signal scales of the training schedule, one per step.
#[wasm_bindgen]
pub fn training_alphas(steps: usize, eps: f64) -> Result<Vec<f64>, JsError> {
    Ok(linear_schedule(steps, eps).map_err(js)?.alphas().to_vec())
}

/// Largest admissible noise scale for a step, given the scales one step
/// noisier.
#[wasm_bindgen]
pub fn beta_bound(alpha_next: f64, beta_next: f64) -> Result<f64, JsError> {
    beta_upper_bound(alpha_next, beta_next).map_err(js)
}

/// Draws `count` points from the eight-mode ring with the exact noise
/// predictor, jumping along `steps` evenly spaced training steps.
/// Returns interleaved `x, y` pairs.
#[wasm_bindgen]
pub fn sample_ring(steps: usize, count: usize, seed: u64, deterministic: bool) -> Result<Vec<f64>, JsError> {
    let spec = DatasetSpec::mixture8(seed);
    let oracle = spec.oracle().map_err(js)?;
    let training = linear_schedule(1000, 0.9).map_err(js)?;
    let schedule = InferenceSchedule::from_training_subsequence(&training, &subsequence_steps(1000, steps.clamp(1, 1000)))
        .map_err(js)?;
    let kind = if deterministic { ReverseKind::Ddim { eta: 0.0 } } else { ReverseKind::Ddpm };
    let x = sample(oracle.as_ref(), &schedule, count, &mut RngState::new(seed), kind).map_err(js)?;
    Ok(x.data().to_vec())
}

/// Reference draws from the ring itself, interleaved like `sample_ring`.
#[wasm_bindgen]
pub fn ring_data(count: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let spec = DatasetSpec::mixture8(seed);
    let x = sample_law(&spec, count, &mut RngState::new(seed).derive(1)).map_err(js)?;
    Ok(x.data().to_vec())
}
