//! Joint MCMC over (phi, theta_1..theta_J) against parametric belief
//! approximations, followed by sampling/importance-resampling correction with
//! the true belief densities.
//!
//! The kernel is an adaptive random-walk Metropolis over an unconstrained
//! reparameterization: Sigma0 through its log-Cholesky factor, Gamma-prior
//! mean components through log. Updates are blocked (phi, then each theta_j),
//! exploiting the conditional independence of the effects given phi. Step
//! sizes adapt toward a target acceptance rate during warmup only, so the
//! kept draws come from a fixed kernel.

use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::belief::Belief;
use crate::error::{Error, Result};
use crate::meta_model::{log_prior, GlobalParam, HierarchicalSpec};
use crate::stats::{child_seed, kish_ess, split_rhat, GaussianDensity};

/// Configuration of the adaptive Metropolis runs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct McmcConfig {
    pub n_warmup: usize,
    pub n_keep: usize,
    pub n_chains: usize,
    /// Post-warmup draws are thinned by this stride; n_keep survive per chain.
    pub thin: usize,
    /// Scale of the Gaussian jitter applied to the unconstrained start point.
    pub init_jitter: f64,
    /// Target acceptance rate for step-size adaptation, in (0, 1).
    pub adapt_target: f64,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_warmup: 2000,
            n_keep: 2000,
            n_chains: 4,
            thin: 1,
            init_jitter: 0.1,
            adapt_target: 0.3,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_warmup == 0 || self.n_keep == 0 || self.n_chains == 0 || self.thin == 0 {
            return Err(Error::InvalidInput("chain counts must be positive".into()));
        }
        if !(self.init_jitter > 0.0) {
            return Err(Error::InvalidInput("init_jitter must be positive".into()));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::InvalidInput("adapt_target must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One draw of the joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDraw {
    pub phi: GlobalParam,
    pub thetas: Vec<DVector<f64>>,
}

/// Multi-chain MCMC output in constrained space.
#[derive(Debug, Clone)]
pub struct McmcRun {
    pub chains: Vec<Vec<JointDraw>>,
    /// Post-warmup acceptance rate per chain, per block.
    pub accept_rates: Vec<Vec<f64>>,
    pub param_names: Vec<String>,
}

impl McmcRun {
    pub fn pooled(&self) -> Vec<JointDraw> {
        self.chains.iter().flatten().cloned().collect()
    }

    /// Constrained scalar trajectories: [param][chain][iter].
    pub fn scalar_chains(&self) -> Vec<Vec<Vec<f64>>> {
        let n_params = self.param_names.len();
        let mut out = vec![Vec::with_capacity(self.chains.len()); n_params];
        for chain in &self.chains {
            let mut per_param = vec![Vec::with_capacity(chain.len()); n_params];
            for draw in chain {
                for (k, v) in draw_coords(draw).iter().enumerate() {
                    per_param[k].push(*v);
                }
            }
            for (k, series) in per_param.into_iter().enumerate() {
                out[k].push(series);
            }
        }
        out
    }
}

fn draw_coords(draw: &JointDraw) -> Vec<f64> {
    let mut v: Vec<f64> = draw.phi.coords().iter().copied().collect();
    for t in &draw.thetas {
        v.extend(t.iter().copied());
    }
    v
}

/// Column names matching the draw CSV layout.
pub fn joint_param_names(d: usize, n_studies: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..d).map(|k| format!("mu_{k}")).collect();
    for i in 0..d {
        for j in 0..d {
            names.push(format!("sigma0_{i}{j}"));
        }
    }
    for j in 1..=n_studies {
        for k in 0..d {
            names.push(format!("theta_{j}_{k}"));
        }
    }
    names
}

/// Weighted joint draws with normalized weights (sum one; log-sum zero) and
/// the Kish effective sample size of the weights.
#[derive(Debug, Clone)]
pub struct WeightedDraws {
    pub draws: Vec<JointDraw>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub ess: f64,
    /// Set when the effective sample size fell below 1% of the draw count.
    pub weight_collapse: bool,
}

/// Output of the importance-resampling correction.
#[derive(Debug, Clone)]
pub struct SirOutput {
    pub weighted: WeightedDraws,
    pub resampled: Vec<JointDraw>,
}

// --- unconstrained parameterization -----------------------------------------

/// Maps (mu, Sigma0) to an unconstrained vector: mean components (raw, or log
/// under Gamma priors), then the log-Cholesky coordinates of Sigma0 row by row
/// (log diagonal, raw subdiagonal).
pub(crate) struct PhiTransform {
    d: usize,
    log_means: bool,
}

impl PhiTransform {
    pub(crate) fn for_spec(spec: &HierarchicalSpec) -> Result<Self> {
        match spec {
            HierarchicalSpec::GaussianNiw { m, .. } => Ok(Self { d: m.len(), log_means: false }),
            HierarchicalSpec::GaussianGammaMeans { a, .. } => {
                Ok(Self { d: a.len(), log_means: true })
            }
            HierarchicalSpec::BetaBernoulli { .. } => Err(Error::UnsupportedSpec(
                "joint sampling needs a continuous effect model; use the grid oracle for \
                 discrete effects"
                    .into(),
            )),
        }
    }

    pub(crate) fn n_params(&self) -> usize {
        self.d + self.d * (self.d + 1) / 2
    }

    pub(crate) fn unconstrain(&self, mu: &DVector<f64>, sigma0: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut z = Vec::with_capacity(self.n_params());
        for k in 0..self.d {
            z.push(if self.log_means { mu[k].ln() } else { mu[k] });
        }
        let chol = Cholesky::new(sigma0.clone())
            .ok_or_else(|| Error::DomainError("Sigma0 must be positive definite".into()))?;
        let l = chol.l();
        for i in 0..self.d {
            for j in 0..=i {
                z.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
            }
        }
        Ok(z)
    }

    pub(crate) fn constrain(&self, z: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mu = DVector::from_fn(self.d, |k, _| {
            if self.log_means {
                z[k].exp()
            } else {
                z[k]
            }
        });
        let mut l = DMatrix::zeros(self.d, self.d);
        let mut idx = self.d;
        for i in 0..self.d {
            for j in 0..=i {
                l[(i, j)] = if i == j { z[idx].exp() } else { z[idx] };
                idx += 1;
            }
        }
        let sigma0 = &l * l.transpose();
        (mu, sigma0)
    }

    /// log |d(mu, Sigma0) / dz|.
    pub(crate) fn log_jacobian(&self, z: &[f64]) -> f64 {
        let mut acc = self.d as f64 * std::f64::consts::LN_2;
        let mut idx = self.d;
        for i in 0..self.d {
            for j in 0..=i {
                if i == j {
                    // exponent d - i + 1 from L -> Sigma, plus 1 from z -> L.
                    acc += (self.d - i + 1) as f64 * z[idx];
                }
                idx += 1;
            }
        }
        if self.log_means {
            acc += z[..self.d].iter().sum::<f64>();
        }
        acc
    }
}

/// Draws (mu, Sigma0) from the spec's prior.
pub(crate) fn sample_phi_prior(
    spec: &HierarchicalSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match spec {
        HierarchicalSpec::GaussianNiw { m, v, nu, psi } => {
            let mu = GaussianDensity::new(m.clone(), v.clone())?.sample(rng);
            Ok((mu, sample_inverse_wishart(*nu, psi, rng)?))
        }
        HierarchicalSpec::GaussianGammaMeans { a, b, nu, psi } => {
            let mu = DVector::from_fn(a.len(), |k, _| {
                Gamma::new(a[k], 1.0 / b[k]).expect("validated hyperparameters").sample(rng)
            });
            Ok((mu, sample_inverse_wishart(*nu, psi, rng)?))
        }
        HierarchicalSpec::BetaBernoulli { .. } => {
            Err(Error::UnsupportedSpec("no Gaussian prior for a Bernoulli model".into()))
        }
    }
}

/// Bartlett sampler: Sigma ~ InvWishart(nu, Psi) as the inverse of a
/// Wishart(nu, Psi^-1) draw.
fn sample_inverse_wishart(nu: f64, psi: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let d = psi.nrows();
    let psi_inv = psi
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DomainError("Psi must be invertible".into()))?;
    let l_scale = Cholesky::new(psi_inv)
        .ok_or_else(|| Error::DomainError("Psi^-1 must be positive definite".into()))?
        .l()
        .clone_owned();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let dof = nu - i as f64;
        let chi = ChiSquared::new(dof)
            .map_err(|_| Error::DomainError(format!("invalid Wishart dof {dof}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let lw = &l_scale * a;
    let w = &lw * lw.transpose();
    w.try_inverse()
        .ok_or_else(|| Error::DomainError("Wishart draw was singular".into()))
}

// --- generic blocked adaptive random-walk Metropolis -------------------------

pub(crate) struct RawChain {
    pub kept: Vec<Vec<f64>>,
    pub accept: Vec<f64>,
}

/// Runs one chain. `part(z, b)` must return exactly the log-target terms that
/// depend on block `b`, so the acceptance ratio of a block move equals the
/// full-target ratio.
pub(crate) fn adaptive_block_rwm(
    full: &dyn Fn(&[f64]) -> f64,
    part: &dyn Fn(&[f64], usize) -> f64,
    blocks: &[Range<usize>],
    init: Vec<f64>,
    cfg: &McmcConfig,
    seed: u64,
) -> Result<RawChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = init;
    debug_assert!(full(&z).is_finite());
    let mut log_step = vec![0.5f64.ln(); blocks.len()];
    // Per-coordinate proposal scales, refreshed twice during warmup from the
    // chain's own spread so badly mismatched coordinate scales within a block
    // still mix.
    let mut scales: Vec<Vec<f64>> = blocks.iter().map(|r| vec![1.0; r.len()]).collect();
    let mut welford: Vec<Vec<(f64, f64)>> = blocks.iter().map(|r| vec![(0.0, 0.0); r.len()]).collect();
    let mut welford_n = 0u64;
    let refresh_at = [cfg.n_warmup / 2, 3 * cfg.n_warmup / 4];

    let mut cur_part: Vec<f64> = (0..blocks.len()).map(|b| part(&z, b)).collect();
    let mut accepts = vec![0u64; blocks.len()];
    let mut kept = Vec::with_capacity(cfg.n_keep);
    let mut proposal = z.clone();

    let total = cfg.n_warmup + cfg.n_keep * cfg.thin;
    for t in 0..total {
        for (b, range) in blocks.iter().enumerate() {
            proposal.copy_from_slice(&z);
            let step = log_step[b].exp();
            for (k, i) in range.clone().enumerate() {
                proposal[i] =
                    z[i] + step * scales[b][k] * rng.sample::<f64, _>(StandardNormal);
            }
            let prop_part = part(&proposal, b);
            let delta = prop_part - cur_part[b];
            let accept_prob = if delta.is_nan() { 0.0 } else { delta.min(0.0).exp() };
            if rng.random::<f64>() < accept_prob {
                z.copy_from_slice(&proposal);
                // A move in one block can shift terms shared with others
                // (every theta_j block involves phi), so refresh them all.
                cur_part = (0..blocks.len()).map(|bb| part(&z, bb)).collect();
                if t >= cfg.n_warmup {
                    accepts[b] += 1;
                }
            }
            if t < cfg.n_warmup {
                let gamma = ((t + 1) as f64).powf(-0.6);
                log_step[b] += gamma * (accept_prob - cfg.adapt_target);
            }
        }
        if t < cfg.n_warmup {
            welford_n += 1;
            for (b, range) in blocks.iter().enumerate() {
                for (k, i) in range.clone().enumerate() {
                    let (mean, m2) = &mut welford[b][k];
                    let delta = z[i] - *mean;
                    *mean += delta / welford_n as f64;
                    *m2 += delta * (z[i] - *mean);
                }
            }
            if refresh_at.contains(&(t + 1)) && welford_n > 10 {
                for (b, range) in blocks.iter().enumerate() {
                    for k in 0..range.len() {
                        let var = welford[b][k].1 / (welford_n - 1) as f64;
                        if var.is_finite() && var > 0.0 {
                            scales[b][k] = var.sqrt();
                        }
                    }
                    // Fold the typical scale into the step so adaptation
                    // continues from a comparable acceptance rate.
                    let gmean: f64 = (scales[b].iter().map(|s| s.ln()).sum::<f64>()
                        / range.len() as f64)
                        .exp();
                    if gmean.is_finite() && gmean > 0.0 {
                        for s in &mut scales[b] {
                            *s /= gmean;
                        }
                    }
                }
                welford = blocks.iter().map(|r| vec![(0.0, 0.0); r.len()]).collect();
                welford_n = 0;
            }
        }
        if t >= cfg.n_warmup && (t - cfg.n_warmup) % cfg.thin == cfg.thin - 1 {
            kept.push(z.clone());
        }
    }
    let accept: Vec<f64> = accepts
        .iter()
        .map(|a| *a as f64 / (cfg.n_keep * cfg.thin) as f64)
        .collect();
    for rate in &accept {
        if *rate < 0.01 {
            return Err(Error::ChainDivergence { rate: *rate });
        }
    }
    Ok(RawChain { kept, accept })
}

/// Jitters a base start point until the target is finite, as specified:
/// at most 100 retries before reporting a non-finite start.
pub(crate) fn jittered_start(
    full: &dyn Fn(&[f64]) -> f64,
    base: &[f64],
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    const RETRIES: usize = 100;
    for _ in 0..RETRIES {
        let z: Vec<f64> = base
            .iter()
            .map(|v| v + jitter * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if full(&z).is_finite() {
            return Ok(z);
        }
    }
    Err(Error::NonFiniteStart { retries: RETRIES })
}

// --- joint model sampling -----------------------------------------------------

struct JointTarget<'a> {
    spec: &'a HierarchicalSpec,
    approx: Vec<GaussianDensity>,
    tf: PhiTransform,
    d: usize,
}

impl JointTarget<'_> {
    fn n_blocks(&self) -> usize {
        1 + self.approx.len()
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        let p = self.tf.n_params();
        let mut out = vec![0..p];
        for j in 0..self.approx.len() {
            out.push(p + j * self.d..p + (j + 1) * self.d);
        }
        out
    }

    fn theta(&self, z: &[f64], j: usize) -> DVector<f64> {
        let p = self.tf.n_params();
        DVector::from_column_slice(&z[p + j * self.d..p + (j + 1) * self.d])
    }

    fn phi_terms(&self, z: &[f64]) -> f64 {
        let (mu, sigma0) = self.tf.constrain(z);
        let phi = GlobalParam::GaussianPhi { mu: mu.clone(), sigma0: sigma0.clone() };
        let lp = match log_prior(self.spec, &phi) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        let Ok(cond) = GaussianDensity::new(mu, sigma0) else {
            return f64::NEG_INFINITY;
        };
        let mut acc = lp + self.tf.log_jacobian(z);
        for j in 0..self.approx.len() {
            acc += cond.log_pdf(&self.theta(z, j));
        }
        acc
    }

    fn theta_terms(&self, z: &[f64], j: usize) -> f64 {
        let (mu, sigma0) = self.tf.constrain(z);
        let Ok(cond) = GaussianDensity::new(mu, sigma0) else {
            return f64::NEG_INFINITY;
        };
        let t = self.theta(z, j);
        cond.log_pdf(&t) + self.approx[j].log_pdf(&t)
    }

    fn part(&self, z: &[f64], b: usize) -> f64 {
        if b == 0 {
            self.phi_terms(z)
        } else {
            self.theta_terms(z, b - 1)
        }
    }

    fn full(&self, z: &[f64]) -> f64 {
        let mut acc = self.phi_terms(z);
        for j in 0..self.approx.len() {
            let t = self.theta(z, j);
            acc += self.approx[j].log_pdf(&t);
        }
        acc
    }

    fn decode(&self, z: &[f64]) -> JointDraw {
        let (mu, sigma0) = self.tf.constrain(z);
        JointDraw {
            phi: GlobalParam::GaussianPhi { mu, sigma0 },
            thetas: (0..self.approx.len()).map(|j| self.theta(z, j)).collect(),
        }
    }
}

/// Draws from the approximate joint model q(phi) prod_j p(theta_j | phi)
/// approx_j(theta_j) with blocked adaptive random-walk Metropolis.
///
/// The effect model must be continuous (Gaussian families); discrete models
/// are served exactly by the grid oracle instead.
pub fn sample_joint(
    spec: &HierarchicalSpec,
    approx_beliefs: &[Belief],
    cfg: &McmcConfig,
) -> Result<McmcRun> {
    cfg.validate()?;
    let tf = PhiTransform::for_spec(spec)?;
    let d = spec.theta_dim();
    let mut approx = Vec::with_capacity(approx_beliefs.len());
    let mut means = Vec::with_capacity(approx_beliefs.len());
    for b in approx_beliefs {
        match b {
            Belief::Gaussian { mean, cov } => {
                if mean.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: mean.len() });
                }
                approx.push(GaussianDensity::new(mean.clone(), cov.clone())?);
                means.push(mean.clone());
            }
            _ => {
                return Err(Error::UnsupportedBelief(
                    "joint sampling requires Gaussian approximations of the beliefs".into(),
                ))
            }
        }
    }
    let target = JointTarget { spec, approx, tf, d };
    let blocks = target.blocks();
    let full = |z: &[f64]| target.full(z);
    let part = |z: &[f64], b: usize| target.part(z, b);

    let mut chains = Vec::with_capacity(cfg.n_chains);
    let mut accept_rates = Vec::with_capacity(cfg.n_chains);
    for c in 0..cfg.n_chains {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, c as u64));
        let (mu0, sigma00) = sample_phi_prior(spec, &mut rng)?;
        let mut base = target.tf.unconstrain(&mu0, &sigma00)?;
        for m in &means {
            base.extend(m.iter().copied());
        }
        let init = jittered_start(&full, &base, cfg.init_jitter, &mut rng)?;
        let raw = adaptive_block_rwm(
            &full,
            &part,
            &blocks,
            init,
            cfg,
            child_seed(cfg.seed, 1000 + c as u64),
        )?;
        chains.push(raw.kept.iter().map(|z| target.decode(z)).collect());
        accept_rates.push(raw.accept);
    }
    debug_assert_eq!(blocks.len(), target.n_blocks());
    Ok(McmcRun {
        chains,
        accept_rates,
        param_names: joint_param_names(d, approx_beliefs.len()),
    })
}

/// Reweights joint draws by the ratio of true to approximate belief densities
/// and resamples systematically.
///
/// The normalizing constants of the two joint models cancel in the normalized
/// weights, so they are never computed.
pub fn sir_refine(
    draws: &[JointDraw],
    true_beliefs: &[Belief],
    approx_beliefs: &[Belief],
    seed: u64,
) -> Result<SirOutput> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no draws to reweight".into()));
    }
    if true_beliefs.len() != approx_beliefs.len() {
        return Err(Error::DimensionMismatch {
            expected: true_beliefs.len(),
            got: approx_beliefs.len(),
        });
    }
    let j = true_beliefs.len();
    let m = draws.len();
    let mut log_w = Vec::with_capacity(m);
    for draw in draws {
        if draw.thetas.len() != j {
            return Err(Error::DimensionMismatch { expected: j, got: draw.thetas.len() });
        }
        let mut acc = 0.0;
        for (theta, (tb, ab)) in draw.thetas.iter().zip(true_beliefs.iter().zip(approx_beliefs)) {
            let lt = tb.log_density(theta)?;
            let la = ab.log_density(theta)?;
            if la == f64::NEG_INFINITY && lt > f64::NEG_INFINITY {
                return Err(Error::DomainError(
                    "approximation assigns zero density where the true belief does not".into(),
                ));
            }
            acc += lt - la;
        }
        log_w.push(acc);
    }
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::AllZeroMass);
    }
    let u: Vec<f64> = log_w.iter().map(|lw| (lw - shift).exp()).collect();
    let total: f64 = u.iter().sum();
    let weights: Vec<f64> = u.iter().map(|ui| ui / total).collect();
    let log_weights: Vec<f64> = log_w.iter().map(|lw| lw - shift - total.ln()).collect();
    let ess = kish_ess(&u);
    let weight_collapse = ess < 0.01 * m as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resampled_idx = systematic_resample(&weights, m, &mut rng);
    let resampled = resampled_idx.iter().map(|i| draws[*i].clone()).collect();

    Ok(SirOutput {
        weighted: WeightedDraws {
            draws: draws.to_vec(),
            weights,
            log_weights,
            ess,
            weight_collapse,
        },
        resampled,
    })
}

/// Systematic resampling: one uniform offset, then a stride of 1/n through the
/// cumulative weights.
pub fn systematic_resample(weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let u0 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut idx = 0;
    for i in 0..n {
        let u = u0 + i as f64 / n as f64;
        while u > cum && idx + 1 < weights.len() {
            idx += 1;
            cum += weights[idx];
        }
        out.push(idx);
    }
    out
}

/// Per-scalar split-chain convergence summary plus acceptance bookkeeping.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Diagnostics {
    pub r_hat: Vec<(String, f64)>,
    pub accept_rates: Vec<Vec<f64>>,
    pub max_r_hat: f64,
}

pub fn diagnostics(run: &McmcRun) -> Diagnostics {
    let scalars = run.scalar_chains();
    let mut r_hat = Vec::with_capacity(run.param_names.len());
    let mut max_r_hat = f64::NEG_INFINITY;
    for (name, chains) in run.param_names.iter().zip(&scalars) {
        let r = split_rhat(chains);
        if r.is_finite() {
            max_r_hat = max_r_hat.max(r);
        }
        r_hat.push((name.clone(), r));
    }
    Diagnostics { r_hat, accept_rates: run.accept_rates.clone(), max_r_hat }
}

/// Writes draws as `chain,iter,<param columns>` rows.
pub fn write_joint_draws_csv(path: impl AsRef<Path>, chains: &[Vec<JointDraw>], names: &[String]) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    writeln!(w, "chain,iter,{}", names.join(","))?;
    for (c, chain) in chains.iter().enumerate() {
        for (i, draw) in chain.iter().enumerate() {
            let coords = draw_coords(draw);
            let fields: Vec<String> = coords.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{c},{i},{}", fields.join(","))?;
        }
    }
    Ok(())
}
