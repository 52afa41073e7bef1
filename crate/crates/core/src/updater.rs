//! Exact grid-based implementations of the global consensus update, the local
//! shrinkage update, and the equivalent message-passing formulation. This is
//! the oracle layer the samplers are validated against.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::belief::{Belief, GridPmf};
use crate::error::{Error, Result};
use crate::meta_model::{
    expected_log_lik_cached, log_cond, log_prior, BeliefDraws, GlobalParam, HierarchicalSpec,
    McBudget,
};
use crate::stats::{linspace, ln_beta_pdf, logsumexp, trapezoid_weights};

/// A finite grid over global-parameter values with quadrature weights.
///
/// Continuous grids carry trapezoid weights; discrete grids (atom sets) carry
/// counting weights of 1.
#[derive(Debug, Clone)]
pub struct PhiGrid {
    params: Vec<GlobalParam>,
    coords: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl PhiGrid {
    /// Uniform grid of n >= 2 points over phi in [0, 1].
    pub fn bernoulli_uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput("phi grid needs at least 2 points".into()));
        }
        let xs = linspace(0.0, 1.0, n);
        let weights = trapezoid_weights(n, 0.0, 1.0);
        Ok(Self {
            params: xs.iter().map(|p| GlobalParam::BetaBernoulliPhi(*p)).collect(),
            coords: xs.iter().map(|p| DVector::from_vec(vec![*p])).collect(),
            weights,
        })
    }

    /// Discrete support: a strictly increasing set of atoms in [0, 1].
    pub fn bernoulli_atoms(atoms: &[f64]) -> Result<Self> {
        if atoms.len() < 2 {
            return Err(Error::InvalidInput("phi grid needs at least 2 points".into()));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) || atoms.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidInput(
                "atoms must be strictly increasing within [0, 1]".into(),
            ));
        }
        Ok(Self {
            params: atoms.iter().map(|p| GlobalParam::BetaBernoulliPhi(*p)).collect(),
            coords: atoms.iter().map(|p| DVector::from_vec(vec![*p])).collect(),
            weights: vec![1.0; atoms.len()],
        })
    }

    /// Tensor grid over (mu, sigma0^2) for the one-dimensional Gaussian model,
    /// with product trapezoid weights.
    pub fn gaussian_mu_var(
        mu_range: (f64, f64),
        n_mu: usize,
        var_range: (f64, f64),
        n_var: usize,
    ) -> Result<Self> {
        if n_mu < 2 || n_var < 2 {
            return Err(Error::InvalidInput("phi grid needs at least 2 points per axis".into()));
        }
        if !(mu_range.0 < mu_range.1) || !(0.0 < var_range.0 && var_range.0 < var_range.1) {
            return Err(Error::InvalidInput(
                "grid box must be increasing with positive variances".into(),
            ));
        }
        let mus = linspace(mu_range.0, mu_range.1, n_mu);
        let w_mu = trapezoid_weights(n_mu, mu_range.0, mu_range.1);
        let vars = linspace(var_range.0, var_range.1, n_var);
        let w_var = trapezoid_weights(n_var, var_range.0, var_range.1);
        let mut params = Vec::with_capacity(n_mu * n_var);
        let mut coords = Vec::with_capacity(n_mu * n_var);
        let mut weights = Vec::with_capacity(n_mu * n_var);
        for (mu, wm) in mus.iter().zip(&w_mu) {
            for (var, wv) in vars.iter().zip(&w_var) {
                params.push(GlobalParam::GaussianPhi {
                    mu: DVector::from_vec(vec![*mu]),
                    sigma0: nalgebra::DMatrix::from_vec(1, 1, vec![*var]),
                });
                coords.push(DVector::from_vec(vec![*mu, *var]));
                weights.push(wm * wv);
            }
        }
        Ok(Self { params, coords, weights })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[GlobalParam] {
        &self.params
    }

    pub fn coords(&self) -> &[DVector<f64>] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// log prior density at every grid point.
    pub fn log_prior_vector(&self, spec: &HierarchicalSpec) -> Result<Vec<f64>> {
        self.params.iter().map(|p| log_prior(spec, p)).collect()
    }
}

/// Grid over study-effect values with quadrature weights.
#[derive(Debug, Clone)]
pub struct ThetaGrid {
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl ThetaGrid {
    /// The binary support {0, 1} with counting weights.
    pub fn binary() -> Self {
        Self {
            points: vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])],
            weights: vec![1.0, 1.0],
        }
    }

    pub fn uniform_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) {
            return Err(Error::InvalidInput("theta grid needs at least 2 increasing points".into()));
        }
        Ok(Self {
            points: linspace(lo, hi, n).into_iter().map(|x| DVector::from_vec(vec![x])).collect(),
            weights: trapezoid_weights(n, lo, hi),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// A nonnegative potential over a grid, stored in log space. Messages are only
/// meaningful up to a shared constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    log_values: Vec<f64>,
}

impl Message {
    pub fn new(log_values: Vec<f64>) -> Result<Self> {
        if !log_values.iter().any(|v| v.is_finite()) {
            return Err(Error::AllZeroMass);
        }
        Ok(Self { log_values })
    }

    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_values
    }
}

/// Leaf-to-root message: the expected likelihood of one belief at every grid
/// point, shifted so the largest entry is 0.
pub fn message_leaf_to_root(
    spec: &HierarchicalSpec,
    belief: &Belief,
    grid: &PhiGrid,
    budget: &McBudget,
    rng: &mut ChaCha8Rng,
) -> Result<Message> {
    let cache = BeliefDraws::prepare(belief, budget, rng)?;
    let mut log_values = Vec::with_capacity(grid.len());
    for phi in grid.params() {
        let v = match expected_log_lik_cached(spec, phi, belief, &cache) {
            Ok(v) => v,
            Err(Error::NonFiniteEstimate) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        log_values.push(v);
    }
    let m = log_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_finite() {
        for v in &mut log_values {
            *v -= m;
        }
    }
    Message::new(log_values)
}

/// Combines the prior with leaf messages into the normalized global posterior
/// on the grid.
pub fn combine_messages(
    prior_log: &[f64],
    messages: &[Message],
    grid: &PhiGrid,
) -> Result<GridPmf> {
    if prior_log.len() != grid.len() {
        return Err(Error::GridMismatch("prior vector length differs from grid".into()));
    }
    for m in messages {
        if m.len() != grid.len() {
            return Err(Error::GridMismatch("message length differs from grid".into()));
        }
    }
    let mut log_masses = vec![0.0; grid.len()];
    for (i, lm) in log_masses.iter_mut().enumerate() {
        *lm = prior_log[i] + grid.weights()[i].ln();
    }
    for m in messages {
        for (lm, v) in log_masses.iter_mut().zip(m.log_values()) {
            *lm += v;
        }
    }
    GridPmf::from_log_masses(grid.coords().to_vec(), log_masses)
}

/// Global update on a grid: posterior mass proportional to prior times the
/// product of expected likelihood contributions, normalized by log-sum-exp
/// with the grid's quadrature weights.
pub fn global_update(
    spec: &HierarchicalSpec,
    beliefs: &[Belief],
    grid: &PhiGrid,
    budget: &McBudget,
    rng: &mut ChaCha8Rng,
) -> Result<GridPmf> {
    if beliefs.is_empty() {
        return Err(Error::InvalidInput("global update needs at least one belief".into()));
    }
    let prior_log = grid.log_prior_vector(spec)?;
    global_update_with_prior(spec, &prior_log, beliefs, grid, budget, rng)
}

/// Global update against an explicit log-prior vector on the grid. Used for
/// sequential updating (yesterday's posterior as today's prior) and discrete
/// priors that are not part of any spec. An empty belief list returns the
/// prior itself.
pub fn global_update_with_prior(
    spec: &HierarchicalSpec,
    prior_log: &[f64],
    beliefs: &[Belief],
    grid: &PhiGrid,
    budget: &McBudget,
    rng: &mut ChaCha8Rng,
) -> Result<GridPmf> {
    if prior_log.len() != grid.len() {
        return Err(Error::GridMismatch("prior vector length differs from grid".into()));
    }
    let caches: Result<Vec<BeliefDraws>> = beliefs
        .iter()
        .map(|b| BeliefDraws::prepare(b, budget, rng))
        .collect();
    let caches = caches?;
    let mut log_masses = Vec::with_capacity(grid.len());
    for (i, phi) in grid.params().iter().enumerate() {
        let mut acc = prior_log[i] + grid.weights()[i].ln();
        for (belief, cache) in beliefs.iter().zip(&caches) {
            if acc == f64::NEG_INFINITY {
                break;
            }
            acc += match expected_log_lik_cached(spec, phi, belief, cache) {
                Ok(v) => v,
                Err(Error::NonFiniteEstimate) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
        }
        log_masses.push(acc);
    }
    GridPmf::from_log_masses(grid.coords().to_vec(), log_masses)
}

/// Root-to-leaf message over a theta grid: the prior and the other leaves'
/// messages integrated against the conditional by quadrature over phi.
pub fn message_root_to_leaf(
    spec: &HierarchicalSpec,
    messages_others: &[Message],
    prior_log: &[f64],
    theta_grid: &ThetaGrid,
    phi_grid: &PhiGrid,
) -> Result<Message> {
    if prior_log.len() != phi_grid.len() {
        return Err(Error::GridMismatch("prior vector length differs from grid".into()));
    }
    for m in messages_others {
        if m.len() != phi_grid.len() {
            return Err(Error::GridMismatch("message length differs from grid".into()));
        }
    }
    let mut root_log = vec![0.0; phi_grid.len()];
    for (i, r) in root_log.iter_mut().enumerate() {
        *r = prior_log[i] + phi_grid.weights()[i].ln();
        for m in messages_others {
            *r += m.log_values()[i];
        }
    }
    let mut out = Vec::with_capacity(theta_grid.len());
    for t in theta_grid.points() {
        let mut terms = Vec::with_capacity(phi_grid.len());
        for (i, phi) in phi_grid.params().iter().enumerate() {
            let c = match log_cond(spec, t, phi) {
                Ok(v) => v,
                Err(Error::DomainError(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            terms.push(c + root_log[i]);
        }
        out.push(logsumexp(&terms));
    }
    Message::new(out)
}

/// Updated belief over one leaf: its own density times a root-to-leaf message,
/// normalized with the theta grid's quadrature weights.
pub fn combine_local(
    belief: &Belief,
    root_message: &Message,
    theta_grid: &ThetaGrid,
) -> Result<GridPmf> {
    if root_message.len() != theta_grid.len() {
        return Err(Error::GridMismatch("message length differs from theta grid".into()));
    }
    let mut log_masses = Vec::with_capacity(theta_grid.len());
    for ((t, w), mv) in theta_grid
        .points()
        .iter()
        .zip(theta_grid.weights())
        .zip(root_message.log_values())
    {
        log_masses.push(belief.log_density(t)? + mv + w.ln());
    }
    GridPmf::from_log_masses(theta_grid.points().to_vec(), log_masses)
}

/// Local update: revises belief `j_prime` (0-based) using the global posterior
/// formed from all the other beliefs. Computed by direct quadrature: a
/// separate route from the message-passing composition.
pub fn local_update(
    spec: &HierarchicalSpec,
    beliefs: &[Belief],
    j_prime: usize,
    theta_grid: &ThetaGrid,
    phi_grid: &PhiGrid,
    budget: &McBudget,
    rng: &mut ChaCha8Rng,
) -> Result<GridPmf> {
    if j_prime >= beliefs.len() {
        return Err(Error::IndexOutOfRange { index: j_prime, len: beliefs.len() });
    }
    let target = &beliefs[j_prime];
    if matches!(target, Belief::Dirac(_)) {
        return Err(Error::UnsupportedBelief(
            "cannot update a Dirac belief: it has no density".into(),
        ));
    }
    let others: Vec<Belief> = beliefs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != j_prime)
        .map(|(_, b)| b.clone())
        .collect();
    let prior_log = phi_grid.log_prior_vector(spec)?;
    // Posterior over phi given every belief except j'.
    let q_minus = global_update_with_prior(spec, &prior_log, &others, phi_grid, budget, rng)?;
    let mut log_masses = Vec::with_capacity(theta_grid.len());
    for (t, w) in theta_grid.points().iter().zip(theta_grid.weights()) {
        let mut terms = Vec::with_capacity(phi_grid.len());
        for (i, phi) in phi_grid.params().iter().enumerate() {
            let c = match log_cond(spec, t, phi) {
                Ok(v) => v,
                Err(Error::DomainError(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            terms.push(c + q_minus.log_probs()[i]);
        }
        log_masses.push(target.log_density(t)? + logsumexp(&terms) + w.ln());
    }
    GridPmf::from_log_masses(theta_grid.points().to_vec(), log_masses)
}

/// Closed-form posterior curve for the Bernoulli model with soft binary
/// observations: Beta(alpha, beta) density times the product of the modified
/// likelihood terms phi p_j + (1 - phi)(1 - p_j), normalized on the grid.
pub fn bernoulli_soft_curve(
    alpha: f64,
    beta: f64,
    soft_probs: &[f64],
    grid: &PhiGrid,
) -> Result<GridPmf> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::DomainError("Beta hyperparameters must be positive".into()));
    }
    if soft_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::DomainError("soft probabilities must lie in [0, 1]".into()));
    }
    let mut log_masses = Vec::with_capacity(grid.len());
    for (coord, w) in grid.coords().iter().zip(grid.weights()) {
        let phi = coord[0];
        let mut acc = ln_beta_pdf(phi, alpha, beta) + w.ln();
        for p in soft_probs {
            acc += (phi * p + (1.0 - phi) * (1.0 - p)).ln();
        }
        log_masses.push(acc);
    }
    GridPmf::from_log_masses(grid.coords().to_vec(), log_masses)
}
