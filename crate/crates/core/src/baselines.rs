//! Classical comparison methods: random-effects and fixed-effects
//! meta-analysis over frequentist study estimates, the naive model that treats
//! posterior means as exact observations, and the conditional-sum-of-squares
//! point estimates plus parametric-bootstrap covariances they consume.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abc::{simulate_ma2, Ma2Params};
use crate::belief::GridPmf;
use crate::error::{Error, Result};
use crate::meta_model::{log_prior, GlobalParam, HierarchicalSpec};
use crate::sampler::{
    adaptive_block_rwm, jittered_start, joint_param_names, sample_phi_prior, JointDraw, McmcConfig,
    McmcRun, PhiTransform,
};
use crate::stats::{child_seed, ln_normal_pdf, GaussianDensity};
use crate::updater::PhiGrid;

/// A frequentist study summary: point estimate and covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EstimateWire", into = "EstimateWire")]
pub struct StudyEstimate {
    pub theta_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
}

impl StudyEstimate {
    pub fn new(theta_hat: DVector<f64>, sigma_hat: DMatrix<f64>) -> Result<Self> {
        let d = theta_hat.len();
        if sigma_hat.nrows() != d || sigma_hat.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: sigma_hat.nrows() });
        }
        if Cholesky::new(sigma_hat.clone()).is_none() {
            return Err(Error::DegenerateSamples(
                "study covariance is not positive definite".into(),
            ));
        }
        Ok(Self { theta_hat, sigma_hat })
    }
}

#[derive(Serialize, Deserialize)]
struct EstimateWire {
    theta_hat: Vec<f64>,
    sigma_hat: Vec<Vec<f64>>,
}

impl TryFrom<EstimateWire> for StudyEstimate {
    type Error = Error;

    fn try_from(w: EstimateWire) -> Result<Self> {
        StudyEstimate::new(
            DVector::from_vec(w.theta_hat),
            crate::meta_model::mat_from_nested(&w.sigma_hat)?,
        )
    }
}

impl From<StudyEstimate> for EstimateWire {
    fn from(e: StudyEstimate) -> Self {
        EstimateWire {
            theta_hat: e.theta_hat.iter().copied().collect(),
            sigma_hat: crate::meta_model::nested_from_mat(&e.sigma_hat),
        }
    }
}

/// Conditional sum of squares of an MA(2) fit: residuals are reconstructed
/// recursively with the pre-series innovations pinned to zero.
pub fn css_objective(series: &[f64], theta1: f64, theta2: f64) -> f64 {
    let mut e_prev = 0.0;
    let mut e_prev2 = 0.0;
    let mut acc = 0.0;
    for y in series {
        let e = y - theta1 * e_prev - theta2 * e_prev2;
        acc += e * e;
        e_prev2 = e_prev;
        e_prev = e;
    }
    acc
}

/// Minimizes the conditional sum of squares over the identifiability triangle:
/// a coarse grid scan followed by five rounds of step-halving around the best
/// point.
pub fn css_estimate(series: &[f64], grid_resolution: usize) -> Result<Ma2Params> {
    if series.len() < 3 {
        return Err(Error::InvalidInput("series must have at least 3 points".into()));
    }
    if grid_resolution < 2 {
        return Err(Error::InvalidInput("grid resolution must be at least 2".into()));
    }
    let n = grid_resolution;
    let h1 = 4.0 / (n - 1) as f64;
    let h2 = 2.0 / (n - 1) as f64;
    let mut best = (0.0, 0.0);
    let mut best_val = f64::INFINITY;
    for i in 0..n {
        let t2 = -1.0 + h2 * i as f64;
        for j in 0..n {
            let t1 = -2.0 + h1 * j as f64;
            if !in_closed_triangle(t1, t2) {
                continue;
            }
            let v = css_objective(series, t1, t2);
            if v < best_val {
                best_val = v;
                best = (t1, t2);
            }
        }
    }
    let (mut step1, mut step2) = (h1, h2);
    for _ in 0..5 {
        step1 *= 0.5;
        step2 *= 0.5;
        for di in -1i32..=1 {
            for dj in -1i32..=1 {
                let t1 = best.0 + dj as f64 * step1;
                let t2 = best.1 + di as f64 * step2;
                if !in_closed_triangle(t1, t2) {
                    continue;
                }
                let v = css_objective(series, t1, t2);
                if v < best_val {
                    best_val = v;
                    best = (t1, t2);
                }
            }
        }
    }
    // The minimizer can sit on the closure boundary; nudge inside if needed.
    // The theta1 margin is relative to the strip half-width, which collapses
    // near the bottom corner of the triangle.
    let t2 = best.1.clamp(-1.0 + 1e-9, 1.0 - 1e-9);
    let half_width = (t2 + 1.0) * (1.0 - 1e-9);
    let t1 = best.0.clamp(-half_width, half_width);
    Ma2Params::new(t1, t2)
}

fn in_closed_triangle(t1: f64, t2: f64) -> bool {
    (-1.0..=1.0).contains(&t2) && -(t2 + 1.0) <= t1 && t1 <= t2 + 1.0
}

/// Parametric bootstrap covariance of the CSS estimator: simulate B series at
/// the fitted parameters, re-estimate each, return the sample covariance of
/// the replicate estimates. A small ridge keeps the matrix positive definite
/// when replicates nearly collapse.
pub fn bootstrap_cov(
    theta_hat: &Ma2Params,
    n: usize,
    b_replicates: usize,
    grid_resolution: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    if b_replicates < 4 {
        return Err(Error::InvalidInput("bootstrap needs at least d + 2 = 4 replicates".into()));
    }
    let mut estimates = Vec::with_capacity(b_replicates);
    for _ in 0..b_replicates {
        let seed: u64 = rng.random();
        let series = simulate_ma2(theta_hat, n, &mut ChaCha8Rng::seed_from_u64(seed));
        let est = css_estimate(&series, grid_resolution)?;
        estimates.push(DVector::from_vec(vec![est.theta1, est.theta2]));
    }
    let mean = estimates.iter().fold(DVector::zeros(2), |acc, e| acc + e) / b_replicates as f64;
    let mut cov = DMatrix::zeros(2, 2);
    for e in &estimates {
        let d = e - &mean;
        cov += &d * d.transpose();
    }
    cov /= (b_replicates - 1) as f64;
    if Cholesky::new(cov.clone()).is_none() {
        cov += DMatrix::identity(2, 2) * 1e-8;
    }
    Ok(cov)
}

/// Draws of the mean under fixed-effects meta-analysis (between-study
/// covariance pinned to zero).
#[derive(Debug, Clone)]
pub struct FemaRun {
    pub chains: Vec<Vec<DVector<f64>>>,
    pub accept_rates: Vec<Vec<f64>>,
}

impl FemaRun {
    pub fn pooled(&self) -> Vec<DVector<f64>> {
        self.chains.iter().flatten().cloned().collect()
    }
}

fn run_phi_chains(
    spec: &HierarchicalSpec,
    log_lik: impl Fn(&DVector<f64>, &DMatrix<f64>) -> f64,
    cfg: &McmcConfig,
) -> Result<McmcRun> {
    cfg.validate()?;
    let tf = PhiTransform::for_spec(spec)?;
    let d = spec.theta_dim();
    let target = |z: &[f64]| {
        let (mu, sigma0) = tf.constrain(z);
        let phi = GlobalParam::GaussianPhi { mu: mu.clone(), sigma0: sigma0.clone() };
        match log_prior(spec, &phi) {
            Ok(lp) if lp > f64::NEG_INFINITY => lp + tf.log_jacobian(z) + log_lik(&mu, &sigma0),
            _ => f64::NEG_INFINITY,
        }
    };
    let part = |z: &[f64], _: usize| target(z);
    let blocks = vec![0..tf.n_params()];
    let mut chains = Vec::with_capacity(cfg.n_chains);
    let mut accept_rates = Vec::with_capacity(cfg.n_chains);
    for c in 0..cfg.n_chains {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, c as u64));
        let (mu0, sigma00) = sample_phi_prior(spec, &mut rng)?;
        let base = tf.unconstrain(&mu0, &sigma00)?;
        let init = jittered_start(&target, &base, cfg.init_jitter, &mut rng)?;
        let raw = adaptive_block_rwm(
            &target,
            &part,
            &blocks,
            init,
            cfg,
            child_seed(cfg.seed, 1000 + c as u64),
        )?;
        let decoded: Vec<JointDraw> = raw
            .kept
            .iter()
            .map(|z| {
                let (mu, sigma0) = tf.constrain(z);
                JointDraw { phi: GlobalParam::GaussianPhi { mu, sigma0 }, thetas: vec![] }
            })
            .collect();
        chains.push(decoded);
        accept_rates.push(raw.accept);
    }
    Ok(McmcRun { chains, accept_rates, param_names: joint_param_names(d, 0) })
}

/// Random-effects meta-analysis: samples the posterior over (mu, Sigma0) under
/// the marginalized likelihood N(theta_hat_j | mu, Sigma0 + Sigma_hat_j).
pub fn rema_fit(
    estimates: &[StudyEstimate],
    spec: &HierarchicalSpec,
    cfg: &McmcConfig,
) -> Result<McmcRun> {
    if estimates.len() < 2 {
        return Err(Error::InvalidInput("random-effects fit needs at least 2 studies".into()));
    }
    let d = spec.theta_dim();
    for e in estimates {
        if e.theta_hat.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: e.theta_hat.len() });
        }
    }
    let estimates = estimates.to_vec();
    run_phi_chains(
        spec,
        move |mu, sigma0| {
            let mut acc = 0.0;
            for e in &estimates {
                match GaussianDensity::new(mu.clone(), sigma0 + &e.sigma_hat) {
                    Ok(g) => acc += g.log_pdf(&e.theta_hat),
                    Err(_) => return f64::NEG_INFINITY,
                }
            }
            acc
        },
        cfg,
    )
}

/// Naive model: posterior over (mu, Sigma0) treating the supplied means as
/// exactly observed effects.
pub fn naive_fit(
    belief_means: &[DVector<f64>],
    spec: &HierarchicalSpec,
    cfg: &McmcConfig,
) -> Result<McmcRun> {
    if belief_means.is_empty() {
        return Err(Error::InvalidInput("naive fit needs at least one mean".into()));
    }
    let means = belief_means.to_vec();
    run_phi_chains(
        spec,
        move |mu, sigma0| {
            let Ok(g) = GaussianDensity::new(mu.clone(), sigma0.clone()) else {
                return f64::NEG_INFINITY;
            };
            means.iter().map(|m| g.log_pdf(m)).sum()
        },
        cfg,
    )
}

/// Fixed-effects meta-analysis with a Gaussian prior N(m, V) on the mean:
/// posterior proportional to q(mu) prod_j N(theta_hat_j | mu, Sigma_hat_j).
pub fn fema_fit(
    estimates: &[StudyEstimate],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    cfg: &McmcConfig,
) -> Result<FemaRun> {
    cfg.validate()?;
    if estimates.is_empty() {
        return Err(Error::InvalidInput("fixed-effects fit needs at least one study".into()));
    }
    let d = prior_mean.len();
    let prior = GaussianDensity::new(prior_mean.clone(), prior_cov.clone())?;
    let liks: Vec<GaussianDensity> = estimates
        .iter()
        .map(|e| GaussianDensity::new(e.theta_hat.clone(), e.sigma_hat.clone()))
        .collect::<Result<_>>()?;
    let target = move |z: &[f64]| {
        let mu = DVector::from_column_slice(z);
        prior.log_pdf(&mu) + liks.iter().map(|g| g.log_pdf(&mu)).sum::<f64>()
    };
    let part = |z: &[f64], _: usize| target(z);
    let blocks = vec![0..d];
    let mut chains = Vec::with_capacity(cfg.n_chains);
    let mut accept_rates = Vec::with_capacity(cfg.n_chains);
    for c in 0..cfg.n_chains {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, c as u64));
        let base: Vec<f64> = estimates[0].theta_hat.iter().copied().collect();
        let init = jittered_start(&target, &base, cfg.init_jitter, &mut rng)?;
        let raw = adaptive_block_rwm(
            &target,
            &part,
            &blocks,
            init,
            cfg,
            child_seed(cfg.seed, 1000 + c as u64),
        )?;
        chains.push(raw.kept.iter().map(|z| DVector::from_column_slice(z)).collect());
        accept_rates.push(raw.accept);
    }
    Ok(FemaRun { chains, accept_rates })
}

/// Conjugate closed form of the fixed-effects posterior: precision-weighted
/// combination of the prior and the study likelihoods.
pub fn fema_conjugate_posterior(
    estimates: &[StudyEstimate],
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = prior_mean.len();
    let mut precision = prior_cov
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSamples("prior covariance is singular".into()))?;
    let mut shift = &precision * prior_mean;
    for e in estimates {
        let inv = e
            .sigma_hat
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateSamples("study covariance is singular".into()))?;
        shift += &inv * &e.theta_hat;
        precision += inv;
    }
    let cov = precision
        .try_inverse()
        .ok_or_else(|| Error::DegenerateSamples("posterior precision is singular".into()))?;
    let mean = &cov * shift;
    debug_assert_eq!(mean.len(), d);
    Ok((mean, cov))
}

/// Random-effects posterior evaluated exactly on a (mu, sigma0^2) grid for
/// one-dimensional estimates, built directly from the marginal likelihoods.
/// This is an independent route from the expected-likelihood machinery.
pub fn rema_grid_posterior(
    estimates: &[StudyEstimate],
    spec: &HierarchicalSpec,
    grid: &PhiGrid,
) -> Result<GridPmf> {
    if estimates.iter().any(|e| e.theta_hat.len() != 1) {
        return Err(Error::UnsupportedQuery("grid posterior is one-dimensional only".into()));
    }
    let prior_log = grid.log_prior_vector(spec)?;
    let mut log_masses = Vec::with_capacity(grid.len());
    for (i, coord) in grid.coords().iter().enumerate() {
        let (mu, var) = (coord[0], coord[1]);
        let mut acc = prior_log[i] + grid.weights()[i].ln();
        for e in estimates {
            acc += ln_normal_pdf(e.theta_hat[0], mu, var + e.sigma_hat[(0, 0)]);
        }
        log_masses.push(acc);
    }
    GridPmf::from_log_masses(grid.coords().to_vec(), log_masses)
}
