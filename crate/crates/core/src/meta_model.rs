//! The meta-analyst's hierarchical model: a prior over the global parameter, a
//! conditional over study effects, and the expected likelihood contribution
//! that replaces pointwise likelihood terms when an effect is only known
//! through a belief.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{Belief, SampleSet};
use crate::error::{Error, Result};
use crate::stats::{
    ln_beta_pdf, ln_gamma_pdf, ln_multigamma, logsumexp, GaussianDensity,
};

/// A value of the global parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum GlobalParam {
    /// Success probability of the Bernoulli effect model, in [0, 1].
    BetaBernoulliPhi(f64),
    /// Mean and between-study covariance of the Gaussian effect model.
    GaussianPhi { mu: DVector<f64>, sigma0: DMatrix<f64> },
}

impl GlobalParam {
    pub fn dim(&self) -> usize {
        match self {
            GlobalParam::BetaBernoulliPhi(_) => 1,
            GlobalParam::GaussianPhi { mu, .. } => mu.len(),
        }
    }

    /// Flat coordinate view: [phi] or [mu..., sigma0 row-major...].
    pub fn coords(&self) -> DVector<f64> {
        match self {
            GlobalParam::BetaBernoulliPhi(p) => DVector::from_vec(vec![*p]),
            GlobalParam::GaussianPhi { mu, sigma0 } => {
                let mut v: Vec<f64> = mu.iter().copied().collect();
                for i in 0..sigma0.nrows() {
                    for j in 0..sigma0.ncols() {
                        v.push(sigma0[(i, j)]);
                    }
                }
                DVector::from_vec(v)
            }
        }
    }
}

/// Hierarchical model specification: prior over the global parameter plus the
/// conditional family for study effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecWire", into = "SpecWire")]
pub enum HierarchicalSpec {
    /// phi ~ Beta(alpha, beta), theta_j | phi ~ Bernoulli(phi).
    BetaBernoulli { alpha: f64, beta: f64 },
    /// mu ~ N(m, V), Sigma0 ~ InvWishart(nu, Psi), theta_j | phi ~ N(mu, Sigma0).
    GaussianNiw { m: DVector<f64>, v: DMatrix<f64>, nu: f64, psi: DMatrix<f64> },
    /// Independent Gamma(shape a_k, rate b_k) priors on each mean component,
    /// InvWishart(nu, Psi) on Sigma0, theta_j | phi ~ N(mu, Sigma0).
    GaussianGammaMeans { a: DVector<f64>, b: DVector<f64>, nu: f64, psi: DMatrix<f64> },
}

impl HierarchicalSpec {
    pub fn beta_bernoulli(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::DomainError("Beta hyperparameters must be positive".into()));
        }
        Ok(HierarchicalSpec::BetaBernoulli { alpha, beta })
    }

    pub fn gaussian_niw(m: DVector<f64>, v: DMatrix<f64>, nu: f64, psi: DMatrix<f64>) -> Result<Self> {
        let d = m.len();
        check_spd("V", &v, d)?;
        check_spd("Psi", &psi, d)?;
        if !(nu > d as f64 - 1.0) {
            return Err(Error::DomainError(format!("nu must exceed d - 1 = {}", d - 1)));
        }
        Ok(HierarchicalSpec::GaussianNiw { m, v, nu, psi })
    }

    pub fn gaussian_gamma_means(
        a: DVector<f64>,
        b: DVector<f64>,
        nu: f64,
        psi: DMatrix<f64>,
    ) -> Result<Self> {
        let d = a.len();
        if b.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: b.len() });
        }
        if a.iter().chain(b.iter()).any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::DomainError("Gamma hyperparameters must be positive".into()));
        }
        check_spd("Psi", &psi, d)?;
        if !(nu > d as f64 - 1.0) {
            return Err(Error::DomainError(format!("nu must exceed d - 1 = {}", d - 1)));
        }
        Ok(HierarchicalSpec::GaussianGammaMeans { a, b, nu, psi })
    }

    /// Dimension of the study effect theta.
    pub fn theta_dim(&self) -> usize {
        match self {
            HierarchicalSpec::BetaBernoulli { .. } => 1,
            HierarchicalSpec::GaussianNiw { m, .. } => m.len(),
            HierarchicalSpec::GaussianGammaMeans { a, .. } => a.len(),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        !matches!(self, HierarchicalSpec::BetaBernoulli { .. })
    }

    fn matches(&self, phi: &GlobalParam) -> Result<()> {
        let ok = match (self, phi) {
            (HierarchicalSpec::BetaBernoulli { .. }, GlobalParam::BetaBernoulliPhi(_)) => true,
            (HierarchicalSpec::GaussianNiw { .. }, GlobalParam::GaussianPhi { mu, .. })
            | (HierarchicalSpec::GaussianGammaMeans { .. }, GlobalParam::GaussianPhi { mu, .. }) => {
                mu.len() == self.theta_dim()
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::VariantMismatch(
                "global parameter does not belong to the spec's family".into(),
            ))
        }
    }
}

fn check_spd(name: &str, m: &DMatrix<f64>, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: m.nrows() });
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::DomainError(format!("{name} must be symmetric positive definite")));
    }
    Ok(())
}

/// Monte Carlo budget for intractable expected-likelihood integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub n_draws: usize,
}

impl McBudget {
    pub fn new(n_draws: usize) -> Result<Self> {
        if n_draws == 0 {
            return Err(Error::InvalidInput("Monte Carlo budget must be at least 1".into()));
        }
        Ok(Self { n_draws })
    }
}

impl Default for McBudget {
    fn default() -> Self {
        Self { n_draws: 1000 }
    }
}

/// log q(phi); -inf outside the prior's support.
pub fn log_prior(spec: &HierarchicalSpec, phi: &GlobalParam) -> Result<f64> {
    spec.matches(phi)?;
    match (spec, phi) {
        (HierarchicalSpec::BetaBernoulli { alpha, beta }, GlobalParam::BetaBernoulliPhi(p)) => {
            Ok(ln_beta_pdf(*p, *alpha, *beta))
        }
        (HierarchicalSpec::GaussianNiw { m, v, nu, psi }, GlobalParam::GaussianPhi { mu, sigma0 }) => {
            let g = GaussianDensity::new(m.clone(), v.clone())?;
            Ok(g.log_pdf(mu) + ln_invwishart_pdf(sigma0, *nu, psi))
        }
        (
            HierarchicalSpec::GaussianGammaMeans { a, b, nu, psi },
            GlobalParam::GaussianPhi { mu, sigma0 },
        ) => {
            let mut acc = 0.0;
            for k in 0..a.len() {
                acc += ln_gamma_pdf(mu[k], a[k], b[k]);
            }
            Ok(acc + ln_invwishart_pdf(sigma0, *nu, psi))
        }
        _ => unreachable!("variant checked above"),
    }
}

/// log inverse-Wishart density; -inf when sigma is not positive definite.
pub fn ln_invwishart_pdf(sigma: &DMatrix<f64>, nu: f64, psi: &DMatrix<f64>) -> f64 {
    let d = psi.nrows();
    let Some(chol_sigma) = Cholesky::new(sigma.clone()) else {
        return f64::NEG_INFINITY;
    };
    let chol_psi = Cholesky::new(psi.clone()).expect("Psi validated SPD");
    let ln_det_sigma: f64 = 2.0 * chol_sigma.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ln_det_psi: f64 = 2.0 * chol_psi.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = chol_sigma.solve(psi).trace();
    0.5 * nu * ln_det_psi
        - 0.5 * nu * d as f64 * std::f64::consts::LN_2
        - ln_multigamma(d, 0.5 * nu)
        - 0.5 * (nu + d as f64 + 1.0) * ln_det_sigma
        - 0.5 * trace
}

/// log p(theta | phi).
pub fn log_cond(spec: &HierarchicalSpec, theta: &DVector<f64>, phi: &GlobalParam) -> Result<f64> {
    spec.matches(phi)?;
    if theta.len() != spec.theta_dim() {
        return Err(Error::DimensionMismatch { expected: spec.theta_dim(), got: theta.len() });
    }
    match phi {
        GlobalParam::BetaBernoulliPhi(p) => {
            if theta[0] == 1.0 {
                Ok(p.ln())
            } else if theta[0] == 0.0 {
                Ok((1.0 - p).ln())
            } else {
                Err(Error::DomainError(format!(
                    "Bernoulli effect must be 0 or 1, got {}",
                    theta[0]
                )))
            }
        }
        GlobalParam::GaussianPhi { mu, sigma0 } => {
            let g = GaussianDensity::new(mu.clone(), sigma0.clone())?;
            Ok(g.log_pdf(theta))
        }
    }
}

/// Draws a belief holds ready for Monte Carlo expected-likelihood evaluation,
/// so a sweep over many phi values reuses one draw set. Only KDE beliefs need
/// draws; every other pairing has a closed form.
#[derive(Debug, Clone)]
pub struct BeliefDraws {
    draws: Option<SampleSet>,
}

impl BeliefDraws {
    pub fn prepare(belief: &Belief, budget: &McBudget, rng: &mut ChaCha8Rng) -> Result<Self> {
        let draws = match belief {
            Belief::Kde { .. } => Some(belief.draw(budget.n_draws, rng)?),
            _ => None,
        };
        Ok(Self { draws })
    }
}

/// log of the expected likelihood contribution: the integral of p(theta | phi)
/// against the belief. Closed forms cover every pairing except KDE beliefs,
/// which use a Monte Carlo mean over the cached draws.
pub fn expected_log_lik_cached(
    spec: &HierarchicalSpec,
    phi: &GlobalParam,
    belief: &Belief,
    cache: &BeliefDraws,
) -> Result<f64> {
    spec.matches(phi)?;
    match (phi, belief) {
        // Point mass: standard Bayesian inference as the special case.
        (_, Belief::Dirac(t)) => log_cond(spec, t, phi),
        (GlobalParam::BetaBernoulliPhi(p), Belief::SoftBernoulli(p1)) => {
            Ok((p * p1 + (1.0 - p) * (1.0 - p1)).ln())
        }
        (GlobalParam::BetaBernoulliPhi(_), Belief::Grid(g)) => {
            let terms: Result<Vec<f64>> = g
                .support()
                .iter()
                .zip(g.log_probs())
                .map(|(x, lp)| Ok(log_cond(spec, x, phi)? + lp))
                .collect();
            Ok(logsumexp(&terms?))
        }
        (GlobalParam::BetaBernoulliPhi(_), _) => Err(Error::VariantMismatch(
            "continuous belief cannot feed a Bernoulli effect model".into(),
        )),
        (GlobalParam::GaussianPhi { mu, sigma0 }, Belief::Gaussian { mean, cov }) => {
            if mean.len() != mu.len() {
                return Err(Error::DimensionMismatch { expected: mu.len(), got: mean.len() });
            }
            // Convolution identity: integral of N(theta; mu, S0) dN(theta; m_j, S_j)
            // equals N(m_j; mu, S0 + S_j).
            let g = GaussianDensity::new(mu.clone(), sigma0 + cov)?;
            Ok(g.log_pdf(mean))
        }
        (GlobalParam::GaussianPhi { .. }, Belief::Grid(g)) => {
            let terms: Result<Vec<f64>> = g
                .support()
                .iter()
                .zip(g.log_probs())
                .map(|(x, lp)| Ok(log_cond(spec, x, phi)? + lp))
                .collect();
            Ok(logsumexp(&terms?))
        }
        (GlobalParam::GaussianPhi { .. }, Belief::Kde { .. }) => {
            let draws = cache.draws.as_ref().ok_or_else(|| {
                Error::InvalidInput("KDE expected likelihood requires prepared draws".into())
            })?;
            let terms: Result<Vec<f64>> = draws
                .rows()
                .iter()
                .map(|t| log_cond(spec, t, phi))
                .collect();
            let out = logsumexp(&terms?) - (draws.len() as f64).ln();
            if out == f64::NEG_INFINITY {
                Err(Error::NonFiniteEstimate)
            } else {
                Ok(out)
            }
        }
        (GlobalParam::GaussianPhi { .. }, Belief::SoftBernoulli(_)) => Err(Error::VariantMismatch(
            "binary belief cannot feed a Gaussian effect model".into(),
        )),
    }
}

/// Single-shot expected log likelihood; draws a fresh Monte Carlo set when the
/// belief needs one.
pub fn expected_log_lik(
    spec: &HierarchicalSpec,
    phi: &GlobalParam,
    belief: &Belief,
    budget: &McBudget,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let cache = BeliefDraws::prepare(belief, budget, rng)?;
    expected_log_lik_cached(spec, phi, belief, &cache)
}

/// Linear-scale companion of [`expected_log_lik`].
pub fn expected_lik(
    spec: &HierarchicalSpec,
    phi: &GlobalParam,
    belief: &Belief,
    budget: &McBudget,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    expected_log_lik(spec, phi, belief, budget, rng).map(|l| l.exp())
}

/// A Monte Carlo estimate with its standard error (zero for exact enumeration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// The two swapped-role estimates of the same integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualEstimates {
    /// E over theta ~ belief of p(theta | phi).
    pub forward: McEstimate,
    /// E over theta ~ conditional of the belief density.
    pub reverse: McEstimate,
}

/// Estimates the expected likelihood both ways: integrating the conditional
/// against the belief, and integrating the belief density against the
/// conditional. The two targets are the same integral, so the estimates must
/// agree up to Monte Carlo error.
pub fn dual_estimator_check(
    spec: &HierarchicalSpec,
    phi: &GlobalParam,
    belief: &Belief,
    budget: &McBudget,
    rng: &mut ChaCha8Rng,
) -> Result<DualEstimates> {
    spec.matches(phi)?;
    if matches!(belief, Belief::Dirac(_)) {
        return Err(Error::UnsupportedQuery("Dirac belief has no density function".into()));
    }
    match phi {
        GlobalParam::BetaBernoulliPhi(_) => {
            // Finite support: both directions by full enumeration, no sampling error.
            let pts = [DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
            let mut forward = 0.0;
            let mut reverse = 0.0;
            for t in &pts {
                let cond = log_cond(spec, t, phi)?.exp();
                let dens = belief.density(t)?;
                forward += cond * dens;
                reverse += dens * cond;
            }
            Ok(DualEstimates {
                forward: McEstimate { value: forward, std_error: 0.0 },
                reverse: McEstimate { value: reverse, std_error: 0.0 },
            })
        }
        GlobalParam::GaussianPhi { mu, sigma0 } => {
            let n = budget.n_draws;
            let fwd_draws = belief.draw(n, rng)?;
            let fwd_vals: Result<Vec<f64>> = fwd_draws
                .rows()
                .iter()
                .map(|t| log_cond(spec, t, phi).map(|l| l.exp()))
                .collect();
            let forward = mc_estimate(&fwd_vals?);

            let cond = GaussianDensity::new(mu.clone(), sigma0.clone())?;
            let rev_vals: Result<Vec<f64>> = (0..n)
                .map(|_| belief.density(&cond.sample(rng)))
                .collect();
            let reverse = mc_estimate(&rev_vals?);
            Ok(DualEstimates { forward, reverse })
        }
    }
}

fn mc_estimate(vals: &[f64]) -> McEstimate {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    McEstimate { value: mean, std_error: (var / n).sqrt() }
}

// --- JSON wire format -------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
enum SpecWire {
    BetaBernoulli { alpha: f64, beta: f64 },
    GaussianNiw { m: Vec<f64>, v: Vec<Vec<f64>>, nu: f64, psi: Vec<Vec<f64>> },
    GaussianGammaMeans { a: Vec<f64>, b: Vec<f64>, nu: f64, psi: Vec<Vec<f64>> },
}

pub(crate) fn mat_from_nested(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("matrix must be square and non-empty".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub(crate) fn nested_from_mat(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl TryFrom<SpecWire> for HierarchicalSpec {
    type Error = Error;

    fn try_from(w: SpecWire) -> Result<Self> {
        match w {
            SpecWire::BetaBernoulli { alpha, beta } => HierarchicalSpec::beta_bernoulli(alpha, beta),
            SpecWire::GaussianNiw { m, v, nu, psi } => HierarchicalSpec::gaussian_niw(
                DVector::from_vec(m),
                mat_from_nested(&v)?,
                nu,
                mat_from_nested(&psi)?,
            ),
            SpecWire::GaussianGammaMeans { a, b, nu, psi } => HierarchicalSpec::gaussian_gamma_means(
                DVector::from_vec(a),
                DVector::from_vec(b),
                nu,
                mat_from_nested(&psi)?,
            ),
        }
    }
}

impl From<HierarchicalSpec> for SpecWire {
    fn from(s: HierarchicalSpec) -> Self {
        match s {
            HierarchicalSpec::BetaBernoulli { alpha, beta } => SpecWire::BetaBernoulli { alpha, beta },
            HierarchicalSpec::GaussianNiw { m, v, nu, psi } => SpecWire::GaussianNiw {
                m: m.iter().copied().collect(),
                v: nested_from_mat(&v),
                nu,
                psi: nested_from_mat(&psi),
            },
            HierarchicalSpec::GaussianGammaMeans { a, b, nu, psi } => SpecWire::GaussianGammaMeans {
                a: a.iter().copied().collect(),
                b: b.iter().copied().collect(),
                nu,
                psi: nested_from_mat(&psi),
            },
        }
    }
}
