//! Rejection-sampling ABC engine and the MA(2) study generator that produces
//! the per-study posterior sample sets feeding the meta-analysis.
//!
//! Proposals are driven by per-proposal child seeds derived from one master
//! seed, so runs are reproducible, acceptance decisions are independent of
//! worker scheduling, and sweeps over the threshold share common random
//! numbers.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::belief::SampleSet;
use crate::error::{Error, Result};
use crate::stats::child_seed;

/// Parameters of a moving-average process of order two, restricted to the
/// identifiability triangle: -(theta2 + 1) < theta1 < theta2 + 1, -1 < theta2 < 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ma2Params {
    pub theta1: f64,
    pub theta2: f64,
}

impl Ma2Params {
    pub fn new(theta1: f64, theta2: f64) -> Result<Self> {
        if !Self::in_triangle(theta1, theta2) {
            return Err(Error::DomainError(format!(
                "({theta1}, {theta2}) lies outside the identifiability triangle"
            )));
        }
        Ok(Self { theta1, theta2 })
    }

    pub fn in_triangle(theta1: f64, theta2: f64) -> bool {
        -1.0 < theta2 && theta2 < 1.0 && -(theta2 + 1.0) < theta1 && theta1 < theta2 + 1.0
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.theta1, self.theta2])
    }
}

/// Rejection-sampling configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AbcConfig {
    /// Acceptance threshold on the (weighted) Euclidean summary distance.
    pub epsilon: f64,
    pub n_accept: usize,
    pub max_proposals: u64,
    /// Per-summary distance weights; all ones when absent.
    #[serde(default)]
    pub summary_weights: Option<Vec<f64>>,
}

impl AbcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        if self.n_accept == 0 {
            return Err(Error::InvalidInput("n_accept must be at least 1".into()));
        }
        if (self.n_accept as u64) > self.max_proposals {
            return Err(Error::InvalidInput("n_accept cannot exceed max_proposals".into()));
        }
        if let Some(w) = &self.summary_weights {
            if w.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput("summary weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Simulates n points of the process y_t = e_t + theta1 e_{t-1} + theta2 e_{t-2}
/// with standard normal innovations, including the two pre-series innovations
/// so the series is stationary from the first point.
pub fn simulate_ma2(theta: &Ma2Params, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    assert!(n >= 1);
    let eps: Vec<f64> = (0..n + 2)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    (0..n)
        .map(|t| eps[t + 2] + theta.theta1 * eps[t + 1] + theta.theta2 * eps[t])
        .collect()
}

/// Biased sample autocovariance at the given lag (divisor n).
pub fn autocov(series: &[f64], lag: usize) -> Result<f64> {
    let n = series.len();
    if lag >= n {
        return Err(Error::LagTooLarge { lag, len: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let sum: f64 = (lag..n)
        .map(|t| (series[t] - mean) * (series[t - lag] - mean))
        .sum();
    Ok(sum / n as f64)
}

/// The summary statistics used for MA(2) inference: autocovariances of lags
/// one and two.
pub fn ma2_summaries(series: &[f64]) -> Result<Vec<f64>> {
    Ok(vec![autocov(series, 1)?, autocov(series, 2)?])
}

/// Uniform draw over the identifiability triangle, by rejection from the
/// bounding box [-2, 2] x [-1, 1].
pub fn sample_triangle_prior(rng: &mut ChaCha8Rng) -> Ma2Params {
    loop {
        let theta1 = rng.random::<f64>() * 4.0 - 2.0;
        let theta2 = rng.random::<f64>() * 2.0 - 1.0;
        if Ma2Params::in_triangle(theta1, theta2) {
            return Ma2Params { theta1, theta2 };
        }
    }
}

/// Draws study effects: theta1 ~ Unif(0.4, 0.8) and theta2 normal around
/// theta1 - 0.4 with standard deviation 0.04, resampling the rare draw that
/// falls outside the triangle.
pub fn generate_effects(j: usize, rng: &mut ChaCha8Rng) -> Vec<Ma2Params> {
    assert!(j >= 1);
    (0..j)
        .map(|_| loop {
            let theta1 = 0.4 + 0.4 * rng.random::<f64>();
            let theta2 = -0.4 + theta1 + 0.04 * rng.sample::<f64, _>(StandardNormal);
            if Ma2Params::in_triangle(theta1, theta2) {
                break Ma2Params { theta1, theta2 };
            }
        })
        .collect()
}

/// One accepted proposal with everything needed to replay it.
#[derive(Debug, Clone)]
pub struct AcceptedDraw {
    pub params: DVector<f64>,
    pub sim_seed: u64,
    pub distance: f64,
    pub summaries: Vec<f64>,
}

/// Result of a rejection run. `exhausted` flags a partial set: the proposal
/// budget ran out before `n_accept` acceptances.
#[derive(Debug, Clone)]
pub struct AbcOutcome {
    pub samples: SampleSet,
    pub accepted: Vec<AcceptedDraw>,
    pub n_proposals: u64,
    pub acceptance_rate: f64,
    pub exhausted: bool,
}

/// Weighted Euclidean distance between summary vectors.
pub fn summary_distance(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Generic rejection sampler: draw from the prior, simulate with a fresh child
/// seed, accept when the summary distance is within epsilon. Stops at
/// `n_accept` acceptances or `max_proposals` proposals, whichever comes first.
///
/// The simulator is a pure function of (parameters, seed), which makes every
/// accepted draw replayable.
pub fn abc_rejection<P, S, Z>(
    observed_summaries: &[f64],
    prior_draw: P,
    simulator: S,
    summarize: Z,
    cfg: &AbcConfig,
    master_seed: u64,
) -> Result<AbcOutcome>
where
    P: Fn(&mut ChaCha8Rng) -> DVector<f64>,
    S: Fn(&DVector<f64>, u64) -> Vec<f64>,
    Z: Fn(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if observed_summaries.is_empty() || observed_summaries.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("observed summaries must be finite and non-empty".into()));
    }
    let ones = vec![1.0; observed_summaries.len()];
    let weights = cfg.summary_weights.as_deref().unwrap_or(&ones);
    if weights.len() != observed_summaries.len() {
        return Err(Error::InvalidInput("summary weight length differs from summaries".into()));
    }

    let mut accepted: Vec<AcceptedDraw> = Vec::with_capacity(cfg.n_accept);
    let mut n_proposals = 0u64;
    for i in 0..cfg.max_proposals {
        n_proposals = i + 1;
        let mut prng = ChaCha8Rng::seed_from_u64(child_seed(master_seed, i));
        let params = prior_draw(&mut prng);
        let sim_seed: u64 = prng.random();
        let series = simulator(&params, sim_seed);
        let s = summarize(&series)?;
        if s.len() != observed_summaries.len() {
            return Err(Error::InvalidInput("summary length differs from observed".into()));
        }
        let distance = summary_distance(&s, observed_summaries, weights);
        if distance <= cfg.epsilon {
            accepted.push(AcceptedDraw { params, sim_seed, distance, summaries: s });
            if accepted.len() == cfg.n_accept {
                break;
            }
        }
    }
    let exhausted = accepted.len() < cfg.n_accept;
    if accepted.is_empty() {
        return Err(Error::BudgetExhausted { accepted: 0, requested: cfg.n_accept });
    }
    let samples = SampleSet::new(accepted.iter().map(|a| a.params.clone()).collect())?;
    Ok(AbcOutcome {
        acceptance_rate: accepted.len() as f64 / n_proposals as f64,
        samples,
        accepted,
        n_proposals,
        exhausted,
    })
}

/// MA(2)-specific rejection run: triangle prior, stationary simulator of the
/// given length, lag-1/lag-2 autocovariance summaries.
pub fn abc_ma2_study(
    observed_summaries: &[f64],
    series_len: usize,
    cfg: &AbcConfig,
    master_seed: u64,
) -> Result<AbcOutcome> {
    abc_rejection(
        observed_summaries,
        |rng| sample_triangle_prior(rng).as_vector(),
        move |params, seed| {
            let theta = Ma2Params { theta1: params[0], theta2: params[1] };
            simulate_ma2(&theta, series_len, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        |series| ma2_summaries(series),
        cfg,
        master_seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::stats::ks_distance;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn white_noise_variance() {
        let theta = Ma2Params::new(0.0, 0.0).unwrap();
        let y = simulate_ma2(&theta, 100_000, &mut rng(0));
        let var = autocov(&y, 0).unwrap();
        // Var of the sample variance of n normals is about 2/n.
        assert!((var - 1.0).abs() < 3.0 * (2.0 / 100_000f64).sqrt());
    }

    #[test]
    fn ma2_moments_match_theory() {
        let theta = Ma2Params::new(0.6, 0.2).unwrap();
        let n = 100_000;
        let y = simulate_ma2(&theta, n, &mut rng(1));
        let g0 = autocov(&y, 0).unwrap();
        let g1 = autocov(&y, 1).unwrap();
        let g2 = autocov(&y, 2).unwrap();
        // gamma0 = 1 + t1^2 + t2^2, gamma1 = t1 (1 + t2), gamma2 = t2.
        // Conservative 3-sigma Monte Carlo allowance ~ 3 * c / sqrt(n).
        let tol = 3.0 * 3.0 / (n as f64).sqrt();
        assert!((g0 - 1.4).abs() < tol, "g0 {g0}");
        assert!((g1 - 0.72).abs() < tol, "g1 {g1}");
        assert!((g2 - 0.2).abs() < tol, "g2 {g2}");
    }

    #[test]
    fn ma2_moments_hold_across_the_triangle() {
        // 20 random parameter points; empirical lag-1/lag-2 autocovariances
        // against theta1 (1 + theta2) and theta2, with a conservative
        // Bartlett-style 3-sigma band: Var(gamma_hat) <= 6 gamma0^2 / n for a
        // process whose autocovariances vanish beyond lag 2.
        let mut r = rng(44);
        let n = 100_000;
        for _ in 0..20 {
            let theta = sample_triangle_prior(&mut r);
            let y = simulate_ma2(&theta, n, &mut r);
            let g0_theory = 1.0 + theta.theta1 * theta.theta1 + theta.theta2 * theta.theta2;
            let band = 3.0 * (6.0 * g0_theory * g0_theory / n as f64).sqrt();
            let g1 = autocov(&y, 1).unwrap();
            let g2 = autocov(&y, 2).unwrap();
            assert!(
                (g1 - theta.theta1 * (1.0 + theta.theta2)).abs() < band,
                "lag-1 off at {theta:?}: {g1}"
            );
            assert!((g2 - theta.theta2).abs() < band, "lag-2 off at {theta:?}: {g2}");
        }
    }

    #[test]
    fn simulate_is_deterministic() {
        let theta = Ma2Params::new(0.6, 0.2).unwrap();
        assert_eq!(simulate_ma2(&theta, 32, &mut rng(7)), simulate_ma2(&theta, 32, &mut rng(7)));
    }

    #[test]
    fn autocov_known_values() {
        assert_eq!(autocov(&[3.0; 10], 0).unwrap(), 0.0);
        assert_eq!(autocov(&[3.0; 10], 3).unwrap(), 0.0);

        let alt = [1.0, -1.0, 1.0, -1.0];
        assert_relative_eq!(autocov(&alt, 1).unwrap(), -0.75, epsilon = 1e-15);

        let y = [0.3, 1.2, -0.6, 0.9];
        let mean = y.iter().sum::<f64>() / 4.0;
        let biased_var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert_relative_eq!(autocov(&y, 0).unwrap(), biased_var, epsilon = 1e-15);

        assert!(matches!(autocov(&y, 4), Err(Error::LagTooLarge { .. })));
    }

    #[test]
    fn triangle_prior_moments() {
        let mut r = rng(2);
        let draws: Vec<Ma2Params> = (0..100_000).map(|_| sample_triangle_prior(&mut r)).collect();
        assert!(draws.iter().all(|t| Ma2Params::in_triangle(t.theta1, t.theta2)));
        let m1 = draws.iter().map(|t| t.theta1).sum::<f64>() / draws.len() as f64;
        let m2 = draws.iter().map(|t| t.theta2).sum::<f64>() / draws.len() as f64;
        // Centroid of the triangle with vertices (0,-1), (2,1), (-2,1) is (0, 1/3).
        // Std of theta1 is below 1, of theta2 below 0.5.
        let n = draws.len() as f64;
        assert!(m1.abs() < 3.0 / n.sqrt() * 1.0, "m1 {m1}");
        assert!((m2 - 1.0 / 3.0).abs() < 3.0 / n.sqrt() * 0.5, "m2 {m2}");
    }

    #[test]
    fn effects_match_generating_moments() {
        let effects = generate_effects(10_000, &mut rng(3));
        assert!(effects.iter().all(|t| Ma2Params::in_triangle(t.theta1, t.theta2)));
        let m1 = effects.iter().map(|t| t.theta1).sum::<f64>() / effects.len() as f64;
        let m2 = effects.iter().map(|t| t.theta2).sum::<f64>() / effects.len() as f64;
        // theta1 uniform(0.4, 0.8): mean 0.6, sd 0.4/sqrt(12).
        let sd1 = 0.4 / 12f64.sqrt();
        assert!((m1 - 0.6).abs() < 3.0 * sd1 / 100.0, "m1 {m1}");
        let sd2 = (sd1 * sd1 + 0.04 * 0.04).sqrt();
        assert!((m2 - 0.2).abs() < 3.0 * sd2 / 100.0, "m2 {m2}");

        assert_eq!(generate_effects(12, &mut rng(4)), generate_effects(12, &mut rng(4)));
    }

    #[test]
    fn infinite_threshold_reproduces_the_prior() {
        let cfg = AbcConfig {
            epsilon: f64::INFINITY,
            n_accept: 2000,
            max_proposals: 10_000,
            summary_weights: None,
        };
        let out = abc_ma2_study(&[0.1, 0.05], 10, &cfg, 9).unwrap();
        assert!(!out.exhausted);
        assert_eq!(out.samples.len(), 2000);
        assert_eq!(out.n_proposals, 2000);

        // The theta2 marginal must match the triangle prior: KS against a
        // large direct-sampling oracle.
        let mut r = rng(10);
        let mut oracle: Vec<f64> = (0..200_000).map(|_| sample_triangle_prior(&mut r).theta2).collect();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = move |x: f64| {
            let pos = oracle.partition_point(|v| *v <= x);
            pos as f64 / oracle.len() as f64
        };
        let t2: Vec<f64> = out.samples.rows().iter().map(|row| row[1]).collect();
        assert!(ks_distance(&t2, cdf) < 0.05);
    }

    #[test]
    fn zero_like_threshold_exhausts_budget() {
        let cfg = AbcConfig {
            epsilon: 1e-300,
            n_accept: 10,
            max_proposals: 2000,
            summary_weights: None,
        };
        match abc_ma2_study(&[0.1, 0.05], 10, &cfg, 0) {
            Err(Error::BudgetExhausted { accepted, .. }) => assert_eq!(accepted, 0),
            Ok(out) => {
                assert!(out.exhausted);
                assert!(out.samples.len() < 10);
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn tight_threshold_study_accepts_within_threshold() {
        let truth = Ma2Params::new(0.6, 0.2).unwrap();
        let series = simulate_ma2(&truth, 10, &mut rng(12));
        let observed = ma2_summaries(&series).unwrap();
        let cfg = AbcConfig {
            epsilon: 0.1,
            n_accept: 1000,
            max_proposals: 10_000_000,
            summary_weights: None,
        };
        let out = abc_ma2_study(&observed, 10, &cfg, 13).unwrap();
        assert!(!out.exhausted);
        assert_eq!(out.samples.len(), 1000);
        assert!(out.acceptance_rate > 0.0);
        for a in &out.accepted {
            assert!(a.distance <= 0.1);
            assert!(Ma2Params::in_triangle(a.params[0], a.params[1]));
        }
        let mean = out.samples.mean();
        assert!(Ma2Params::in_triangle(mean[0], mean[1]));
    }

    #[test]
    fn accepted_draws_replay_exactly() {
        let truth = Ma2Params::new(0.6, 0.2).unwrap();
        let series = simulate_ma2(&truth, 10, &mut rng(20));
        let observed = ma2_summaries(&series).unwrap();
        let cfg = AbcConfig {
            epsilon: 0.3,
            n_accept: 50,
            max_proposals: 100_000,
            summary_weights: None,
        };
        let out = abc_ma2_study(&observed, 10, &cfg, 21).unwrap();
        for a in &out.accepted {
            let theta = Ma2Params { theta1: a.params[0], theta2: a.params[1] };
            let replay = simulate_ma2(&theta, 10, &mut rng(a.sim_seed));
            let s = ma2_summaries(&replay).unwrap();
            assert_eq!(s, a.summaries);
            let d = summary_distance(&s, &observed, &[1.0, 1.0]);
            assert_eq!(d, a.distance);
            assert!(d <= cfg.epsilon);
        }
    }

    #[test]
    fn acceptance_rate_monotone_in_threshold() {
        let truth = Ma2Params::new(0.6, 0.2).unwrap();
        let series = simulate_ma2(&truth, 10, &mut rng(30));
        let observed = ma2_summaries(&series).unwrap();
        let mut last = f64::INFINITY;
        for eps in [0.4, 0.2, 0.1, 0.05] {
            let cfg = AbcConfig {
                epsilon: eps,
                n_accept: 20_000,
                max_proposals: 20_000,
                summary_weights: None,
            };
            // Common random numbers: same master seed, full proposal scan.
            let rate = match abc_ma2_study(&observed, 10, &cfg, 31) {
                Ok(out) => out.acceptance_rate,
                Err(Error::BudgetExhausted { .. }) => 0.0,
                Err(e) => panic!("{e}"),
            };
            assert!(rate <= last, "rate {rate} after {last} at eps {eps}");
            last = rate;
        }
    }
}
