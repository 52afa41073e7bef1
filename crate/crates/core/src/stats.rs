//! Shared numeric utilities: stable log-space accumulation, special functions,
//! Gaussian densities, quadrature weights and convergence/agreement statistics.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// log(sum(exp(xs))) without overflow. Empty input and all -inf yield -inf.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m.is_infinite() {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Natural log of the gamma function (Lanczos approximation, g = 7, n = 9).
///
/// Accurate to ~14 significant digits over the range used here; the reflection
/// formula covers x < 0.5.
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // ln Gamma(x) = ln(pi / sin(pi x)) - ln Gamma(1 - x)
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Log of the multivariate gamma function Gamma_d(a).
pub fn ln_multigamma(d: usize, a: f64) -> f64 {
    let mut acc = 0.25 * (d * (d - 1)) as f64 * std::f64::consts::PI.ln();
    for i in 1..=d {
        acc += ln_gamma(a + 0.5 * (1.0 - i as f64));
    }
    acc
}

/// log Beta(a, b) density at x in [0, 1]; -inf outside the support.
///
/// Boundary points use the convention 0 * ln(0) = 0 so Beta(1, 1) stays flat.
pub fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::NEG_INFINITY;
    }
    let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let t1 = if a == 1.0 { 0.0 } else { (a - 1.0) * x.ln() };
    let t2 = if b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - x).ln() };
    ln_norm + t1 + t2
}

/// log Gamma(shape, rate) density at x > 0; -inf outside the support.
pub fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Multivariate Gaussian density with precomputed Cholesky factor.
pub struct GaussianDensity {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianDensity {
    /// Fails with `DegenerateSamples` when the covariance is not positive definite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        let chol = Cholesky::new(cov)
            .ok_or_else(|| Error::DegenerateSamples("covariance is not positive definite".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
        let log_norm = -0.5 * d as f64 * LN_2PI - log_det;
        Ok(Self { mean, chol, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let y = self.chol.l().solve_lower_triangular(&diff).expect("chol diag > 0");
        self.log_norm - 0.5 * y.norm_squared()
    }

    /// mean + L z with z standard normal.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        &self.mean + self.chol.l() * z
    }
}

/// log of a univariate normal density.
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -0.5 * (LN_2PI + var.ln()) - 0.5 * (x - mean) * (x - mean) / var
}

/// Trapezoid quadrature weights on a uniform grid of n >= 2 points over [lo, hi].
pub fn trapezoid_weights(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    assert!(n >= 2 && hi > lo);
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect()
}

/// Uniform grid of n points over [lo, hi] inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + h * i as f64).collect()
}

/// Kish effective sample size (sum u)^2 / sum(u^2) for nonnegative weights
/// `u` on any common scale. Exactly n when all weights are equal.
pub fn kish_ess(u: &[f64]) -> f64 {
    let s: f64 = u.iter().sum();
    let s2: f64 = u.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        return 0.0;
    }
    s * s / s2
}

/// Kolmogorov-Smirnov distance between a sample and a reference CDF.
pub fn ks_distance(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = draws.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Split-chain potential scale reduction factor over one scalar component.
///
/// Each chain is split in half, giving 2m sequences. Identical chains carry no
/// between-chain information, so that degenerate case reports exactly 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    assert!(!chains.is_empty());
    if chains.len() > 1 && chains.iter().all(|c| c == &chains[0]) {
        return 1.0;
    }
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap();
    if half < 2 {
        return f64::NAN;
    }
    let mut seqs: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        seqs.push(&c[..half]);
        seqs.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m;
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1.0);
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// SplitMix64-style derivation of a child seed from a master seed and a fixed
/// stream counter. Adding streams never perturbs existing ones.
pub fn child_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Slope of the least-squares line through (x, y) pairs.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
