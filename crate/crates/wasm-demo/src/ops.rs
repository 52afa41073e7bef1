//! The demo computations, independent of the JavaScript boundary.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mba_core::belief::Belief;
use mba_core::meta_model::{HierarchicalSpec, McBudget};
use mba_core::updater::{bernoulli_soft_curve, global_update, local_update, PhiGrid, ThetaGrid};

type OpResult = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct Curve {
    phi: Vec<f64>,
    density: Vec<f64>,
    mean: f64,
}

pub fn soft_observation_curve(
    alpha: f64,
    beta: f64,
    n_studies: usize,
    p1: f64,
    n_grid: usize,
) -> OpResult {
    let grid = PhiGrid::bernoulli_uniform(n_grid.max(2)).map_err(err)?;
    let probs = vec![p1; n_studies.max(1)];
    let pmf = bernoulli_soft_curve(alpha, beta, &probs, &grid).map_err(err)?;
    let curve = Curve {
        phi: grid.coords().iter().map(|c| c[0]).collect(),
        density: pmf
            .probs()
            .iter()
            .zip(grid.weights())
            .map(|(p, w)| p / w)
            .collect(),
        mean: pmf.mean()[0],
    };
    serde_json::to_string(&curve).map_err(err)
}

#[derive(Serialize)]
struct ConcentrationPaths {
    atoms: Vec<f64>,
    j: Vec<usize>,
    /// mass[a][k] is the posterior mass of atom a after j[k] studies.
    mass: Vec<Vec<f64>>,
    kl_optimal_atom: f64,
}

/// The mass condenses on the atom whose implied emission law is KL-closest to
/// the true one, so weak emissions can pull it away from the generative atom.
pub fn concentration_paths(seed: u64, phi_true: f64, emit_hi: f64, j_max: usize) -> OpResult {
    if !(0.0..=1.0).contains(&phi_true) || !(0.0..=1.0).contains(&emit_hi) {
        return Err("phi_true and emit_hi must lie in [0, 1]".into());
    }
    let atoms = [0.1, 0.3, 0.5, 0.7, 0.9];
    let emit_lo = 1.0 - emit_hi;
    let j_max = j_max.clamp(1, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let kl = |p: f64, q: f64| {
        let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
        term(p, q) + term(1.0 - p, 1.0 - q)
    };
    let kl_optimal_atom = atoms
        .iter()
        .copied()
        .min_by(|a, b| {
            let ka = kl(phi_true, a * emit_hi + (1.0 - a) * emit_lo);
            let kb = kl(phi_true, b * emit_hi + (1.0 - b) * emit_lo);
            ka.partial_cmp(&kb).unwrap()
        })
        .unwrap();

    let stride = (j_max / 200).max(1);
    let mut log_mass = vec![(1.0f64 / atoms.len() as f64).ln(); atoms.len()];
    let mut out = ConcentrationPaths {
        atoms: atoms.to_vec(),
        j: vec![0],
        mass: vec![vec![1.0 / atoms.len() as f64]; atoms.len()],
        kl_optimal_atom,
    };
    for j in 1..=j_max {
        let effect = rng.random::<f64>() < phi_true;
        let p = if effect { emit_hi } else { emit_lo };
        for (lm, atom) in log_mass.iter_mut().zip(&atoms) {
            *lm += (atom * p + (1.0 - atom) * (1.0 - p)).ln();
        }
        if j % stride == 0 || j == j_max {
            let norm = mba_core::stats::logsumexp(&log_mass);
            out.j.push(j);
            for (a, lm) in log_mass.iter().enumerate() {
                out.mass[a].push((lm - norm).exp());
            }
        }
    }
    serde_json::to_string(&out).map_err(err)
}

#[derive(Serialize)]
struct ShrinkageCurves {
    theta: Vec<f64>,
    original: Vec<f64>,
    updated: Vec<f64>,
    mu: Vec<f64>,
    mu_density: Vec<f64>,
}

pub fn gaussian_shrinkage(
    means: &[f64],
    variances: &[f64],
    study: usize,
    prior_mean: f64,
    prior_var: f64,
) -> OpResult {
    if means.len() != variances.len() || means.is_empty() {
        return Err("means and variances must be non-empty and equally long".into());
    }
    if study >= means.len() {
        return Err("study index out of range".into());
    }
    let spec = HierarchicalSpec::gaussian_niw(
        DVector::from_vec(vec![prior_mean]),
        DMatrix::from_vec(1, 1, vec![prior_var.max(1e-6)]),
        3.0,
        DMatrix::from_vec(1, 1, vec![0.5]),
    )
    .map_err(err)?;
    let beliefs: Vec<Belief> = means
        .iter()
        .zip(variances)
        .map(|(m, v)| {
            Belief::gaussian(DVector::from_vec(vec![*m]), DMatrix::from_vec(1, 1, vec![v.max(1e-6)]))
        })
        .collect::<mba_core::error::Result<_>>()
        .map_err(err)?;

    let spread = variances.iter().fold(0.0f64, |a, v| a.max(*v)).sqrt();
    let lo = means.iter().fold(f64::INFINITY, |a, m| a.min(*m)) - 3.0 * spread - 0.5;
    let hi = means.iter().fold(f64::NEG_INFINITY, |a, m| a.max(*m)) + 3.0 * spread + 0.5;
    let phi_grid = PhiGrid::gaussian_mu_var((lo, hi), 121, (1e-3, 4.0 * spread * spread + 1.0), 121)
        .map_err(err)?;
    let theta_grid = ThetaGrid::uniform_1d(lo, hi, 241).map_err(err)?;
    let budget = McBudget::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let updated = local_update(&spec, &beliefs, study, &theta_grid, &phi_grid, &budget, &mut rng)
        .map_err(err)?;
    let global = global_update(&spec, &beliefs, &phi_grid, &budget, &mut rng).map_err(err)?;
    let mu_marginal = global.marginal(0).map_err(err)?;
    let mu_step = (hi - lo) / 120.0;

    let curves = ShrinkageCurves {
        theta: theta_grid.points().iter().map(|p| p[0]).collect(),
        original: theta_grid
            .points()
            .iter()
            .map(|p| beliefs[study].density(p))
            .collect::<mba_core::error::Result<_>>()
            .map_err(err)?,
        updated: updated
            .probs()
            .iter()
            .zip(theta_grid.weights())
            .map(|(p, w)| p / w)
            .collect(),
        mu: mu_marginal.iter().map(|(x, _)| *x).collect(),
        mu_density: mu_marginal.iter().map(|(_, m)| m / mu_step).collect(),
    };
    serde_json::to_string(&curves).map_err(err)
}
