//! Interactive browser demo of posterior fusion: three operations driven by
//! the exact grid machinery, each returning plot-ready JSON. The `ops` module
//! holds the target-independent logic; the exported functions only translate
//! errors across the JavaScript boundary.

use wasm_bindgen::prelude::*;

pub mod ops;

fn boundary(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Posterior density over the shared success probability after observing
/// `n_studies` soft binary beliefs with common P(effect = 1) = p1, under a
/// Beta(alpha, beta) prior.
#[wasm_bindgen]
pub fn soft_observation_curve(
    alpha: f64,
    beta: f64,
    n_studies: usize,
    p1: f64,
    n_grid: usize,
) -> Result<String, JsValue> {
    boundary(ops::soft_observation_curve(alpha, beta, n_studies, p1, n_grid))
}

/// Posterior mass trajectories over the discrete support {0.1, 0.3, 0.5, 0.7,
/// 0.9} as soft observations accumulate: effects drawn at `phi_true`, emitted
/// with strength `emit_hi` (its complement when the effect is 0).
#[wasm_bindgen]
pub fn concentration_paths(
    seed: u64,
    phi_true: f64,
    emit_hi: f64,
    j_max: usize,
) -> Result<String, JsValue> {
    boundary(ops::concentration_paths(seed, phi_true, emit_hi, j_max))
}

/// Shrinkage of one study's belief under a one-dimensional Gaussian effect
/// model: the selected study's original density against its update after
/// borrowing strength from the others, plus the posterior of the global mean.
/// `study` is zero-based.
#[wasm_bindgen]
pub fn gaussian_shrinkage(
    means: Vec<f64>,
    variances: Vec<f64>,
    study: usize,
    prior_mean: f64,
    prior_var: f64,
) -> Result<String, JsValue> {
    boundary(ops::gaussian_shrinkage(&means, &variances, study, prior_mean, prior_var))
}
