//! Observed beliefs over study-specific effects: point masses, soft binary
//! observations, Gaussians, finite grid pmfs and Gaussian-kernel KDEs, with
//! density evaluation, sampling and fitting from posterior sample sets.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stats::{logsumexp, GaussianDensity, LN_2PI};

/// A set of posterior draws from one study: L rows of dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    rows: Vec<DVector<f64>>,
    dim: usize,
}

impl SampleSet {
    pub fn new(rows: Vec<DVector<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInput("sample set must contain at least one row".into()));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("sample rows must be non-empty".into()));
        }
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("sample values must be finite".into()));
            }
        }
        Ok(Self { rows, dim })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(DVector::from_vec).collect())
    }

    /// One-dimensional convenience constructor.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| DVector::from_vec(vec![*v])).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.rows
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for r in &self.rows {
            m += r;
        }
        m / self.rows.len() as f64
    }

    /// Unbiased sample covariance (divisor L - 1).
    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for r in &self.rows {
            let d = r - &m;
            c += &d * d.transpose();
        }
        c / (self.rows.len() as f64 - 1.0)
    }

    /// Per-dimension unbiased sample standard deviations.
    pub fn col_std(&self) -> DVector<f64> {
        self.covariance().diagonal().map(|v| v.sqrt())
    }

    /// Reads the CSV interchange format: header `theta_0,...,theta_{d-1}`,
    /// one decimal-text row per draw. NaN and infinities are rejected.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty sample CSV".into()))??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        for (i, c) in cols.iter().enumerate() {
            if *c != format!("theta_{i}") {
                return Err(Error::InvalidInput(format!(
                    "bad sample CSV header column {i}: expected theta_{i}, got {c:?}"
                )));
            }
        }
        let dim = cols.len();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(dim);
            for field in line.trim_end().split(',') {
                let v: f64 = field.parse().map_err(|_| {
                    Error::InvalidInput(format!("row {}: unparsable value {field:?}", lineno + 2))
                })?;
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "row {}: non-finite value {field:?}",
                        lineno + 2
                    )));
                }
                row.push(v);
            }
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {}: expected {dim} fields, got {}",
                    lineno + 2,
                    row.len()
                )));
            }
            rows.push(DVector::from_vec(row));
        }
        Self::new(rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        let header: Vec<String> = (0..self.dim).map(|i| format!("theta_{i}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let fields: Vec<String> = r.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Normalized probability table over a finite set of points. Log-probabilities
/// are kept alongside for stable products downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPmf {
    support: Vec<DVector<f64>>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl GridPmf {
    /// Normalizes nonnegative masses over the given support points.
    pub fn new(support: Vec<DVector<f64>>, masses: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != masses.len() {
            return Err(Error::InvalidInput("grid pmf needs matching, non-empty support and masses".into()));
        }
        if masses.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("grid pmf masses must be finite and nonnegative".into()));
        }
        let log_masses: Vec<f64> = masses.iter().map(|p| p.ln()).collect();
        Self::from_log_masses(support, log_masses)
    }

    /// Normalizes log masses via log-sum-exp. Fails with `AllZeroMass` when no
    /// point has finite log mass.
    pub fn from_log_masses(support: Vec<DVector<f64>>, log_masses: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != log_masses.len() {
            return Err(Error::InvalidInput("grid pmf needs matching, non-empty support and masses".into()));
        }
        let dim = support[0].len();
        if support.iter().any(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: 0 });
        }
        let norm = logsumexp(&log_masses);
        if norm == f64::NEG_INFINITY {
            return Err(Error::AllZeroMass);
        }
        if !norm.is_finite() {
            return Err(Error::InvalidInput("grid pmf masses overflow".into()));
        }
        let log_probs: Vec<f64> = log_masses.iter().map(|lm| lm - norm).collect();
        let probs: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(Self { support, probs, log_probs })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support[0].len()
    }

    pub fn support(&self) -> &[DVector<f64>] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Probability mass at an exact support point; 0 elsewhere.
    pub fn prob_at(&self, x: &DVector<f64>) -> f64 {
        self.support
            .iter()
            .position(|p| p == x)
            .map(|i| self.probs[i])
            .unwrap_or(0.0)
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for (p, w) in self.support.iter().zip(&self.probs) {
            m += p * *w;
        }
        m
    }

    /// Total variation distance to another pmf on the identical support.
    pub fn total_variation(&self, other: &GridPmf) -> Result<f64> {
        if self.support != other.support {
            return Err(Error::GridMismatch("total variation needs identical supports".into()));
        }
        Ok(0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// Collapses mass onto one coordinate, summing over the others. Points are
    /// grouped by exact coordinate value, returned in increasing order.
    pub fn marginal(&self, coord: usize) -> Result<Vec<(f64, f64)>> {
        if coord >= self.dim() {
            return Err(Error::IndexOutOfRange { index: coord, len: self.dim() });
        }
        let mut pairs: Vec<(f64, f64)> = self
            .support
            .iter()
            .zip(&self.probs)
            .map(|(p, w)| (p[coord], *w))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (x, w) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 += w,
                _ => out.push((x, w)),
            }
        }
        Ok(out)
    }

    /// Step CDF of a marginal, for sample-vs-grid agreement checks.
    pub fn marginal_cdf(&self, coord: usize) -> Result<impl Fn(f64) -> f64> {
        let pts = self.marginal(coord)?;
        Ok(move |x: f64| {
            let mut acc = 0.0;
            for (v, w) in &pts {
                if *v <= x {
                    acc += w;
                } else {
                    break;
                }
            }
            acc
        })
    }

    /// Writes `<prefix>_0,...,<prefix>_{d-1},density` rows (prefix `phi` for
    /// global-parameter grids, `theta` for effect grids). Densities are mass
    /// divided by the caller-supplied quadrature weight of each point.
    pub fn write_csv(&self, path: impl AsRef<Path>, weights: &[f64], prefix: &str) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::GridMismatch("weight vector length differs from grid".into()));
        }
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        let header: Vec<String> = (0..self.dim()).map(|i| format!("{prefix}_{i}")).collect();
        writeln!(w, "{},density", header.join(","))?;
        for ((p, mass), wt) in self.support.iter().zip(&self.probs).zip(weights) {
            let coords: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{},{}", coords.join(","), mass / wt)?;
        }
        Ok(())
    }
}

/// Bandwidth selection for KDE beliefs.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    /// h_k = sigma_k * L^(-1/(d+4)) per dimension.
    ScottsRule,
    /// Fixed per-dimension kernel standard deviations.
    Fixed(DVector<f64>),
}

/// An observed belief over a study-specific effect.
#[derive(Debug, Clone, PartialEq)]
pub enum Belief {
    /// Point mass. Supports sampling and exact integration, not density evaluation.
    Dirac(DVector<f64>),
    /// Binary belief with P(theta = 1) = p1.
    SoftBernoulli(f64),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
    Grid(GridPmf),
    /// Gaussian-kernel KDE with a diagonal bandwidth (per-dimension kernel
    /// standard deviations).
    Kde { samples: SampleSet, bandwidth: DVector<f64> },
}

impl Belief {
    pub fn dirac(point: DVector<f64>) -> Self {
        Belief::Dirac(point)
    }

    pub fn soft_bernoulli(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::DomainError(format!("soft-Bernoulli p1 must lie in [0, 1], got {p1}")));
        }
        Ok(Belief::SoftBernoulli(p1))
    }

    /// Validates positive definiteness of `cov` via Cholesky.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: cov.nrows() });
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::DegenerateSamples("belief covariance is not positive definite".into()));
        }
        Ok(Belief::Gaussian { mean, cov })
    }

    pub fn kde(samples: SampleSet, bandwidth: DVector<f64>) -> Result<Self> {
        if bandwidth.len() != samples.dim() {
            return Err(Error::DimensionMismatch { expected: samples.dim(), got: bandwidth.len() });
        }
        if bandwidth.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::DomainError("KDE bandwidth entries must be strictly positive".into()));
        }
        Ok(Belief::Kde { samples, bandwidth })
    }

    pub fn dim(&self) -> usize {
        match self {
            Belief::Dirac(p) => p.len(),
            Belief::SoftBernoulli(_) => 1,
            Belief::Gaussian { mean, .. } => mean.len(),
            Belief::Grid(g) => g.dim(),
            Belief::Kde { samples, .. } => samples.dim(),
        }
    }

    /// Pointwise pdf/pmf value. Dirac beliefs reject evaluation: the point mass
    /// has no density function and is integrated exactly instead.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        self.log_density(x).map(|l| l.exp())
    }

    /// log density; -inf where the density is zero.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        match self {
            Belief::Dirac(_) => Err(Error::UnsupportedQuery(
                "Dirac belief has no density function".into(),
            )),
            Belief::SoftBernoulli(p1) => {
                let v = if x[0] == 1.0 {
                    *p1
                } else if x[0] == 0.0 {
                    1.0 - *p1
                } else {
                    0.0
                };
                Ok(v.ln())
            }
            Belief::Gaussian { mean, cov } => {
                let g = GaussianDensity::new(mean.clone(), cov.clone())?;
                Ok(g.log_pdf(x))
            }
            Belief::Grid(g) => Ok(g.prob_at(x).ln()),
            Belief::Kde { samples, bandwidth } => Ok(kde_log_density(samples, bandwidth, x)),
        }
    }

    /// n i.i.d. draws, deterministic given the generator state.
    pub fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::InvalidInput("draw count must be at least 1".into()));
        }
        let rows = match self {
            Belief::Dirac(p) => vec![p.clone(); n],
            Belief::SoftBernoulli(p1) => (0..n)
                .map(|_| {
                    let v = if rng.random::<f64>() < *p1 { 1.0 } else { 0.0 };
                    DVector::from_vec(vec![v])
                })
                .collect(),
            Belief::Gaussian { mean, cov } => {
                let g = GaussianDensity::new(mean.clone(), cov.clone())?;
                (0..n).map(|_| g.sample(rng)).collect()
            }
            Belief::Grid(g) => {
                let cum: Vec<f64> = g
                    .probs()
                    .iter()
                    .scan(0.0, |acc, p| {
                        *acc += p;
                        Some(*acc)
                    })
                    .collect();
                (0..n)
                    .map(|_| {
                        let u = rng.random::<f64>();
                        let idx = cum.partition_point(|c| *c < u).min(g.len() - 1);
                        g.support()[idx].clone()
                    })
                    .collect()
            }
            Belief::Kde { samples, bandwidth } => (0..n)
                .map(|_| {
                    let idx = rng.random_range(0..samples.len());
                    let base = &samples.rows()[idx];
                    DVector::from_fn(samples.dim(), |k, _| {
                        base[k]
                            + bandwidth[k] * rng.sample::<f64, _>(rand_distr::StandardNormal)
                    })
                })
                .collect(),
        };
        SampleSet::new(rows)
    }
}

fn kde_log_density(samples: &SampleSet, bandwidth: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let d = samples.dim();
    let log_kernel_norm: f64 =
        -0.5 * d as f64 * LN_2PI - bandwidth.iter().map(|h| h.ln()).sum::<f64>();
    let terms: Vec<f64> = samples
        .rows()
        .iter()
        .map(|s| {
            let mut q = 0.0;
            for k in 0..d {
                let z = (x[k] - s[k]) / bandwidth[k];
                q += z * z;
            }
            log_kernel_norm - 0.5 * q
        })
        .collect();
    logsumexp(&terms) - (samples.len() as f64).ln()
}

/// Fits a Gaussian belief by sample mean and unbiased sample covariance.
pub fn fit_gaussian(s: &SampleSet) -> Result<Belief> {
    if s.len() <= s.dim() {
        return Err(Error::TooFewSamples { need: s.dim() + 1, got: s.len() });
    }
    let mean = s.mean();
    let cov = s.covariance();
    if Cholesky::new(cov.clone()).is_none() {
        return Err(Error::DegenerateSamples("sample covariance is not positive definite".into()));
    }
    Ok(Belief::Gaussian { mean, cov })
}

/// Fits a Gaussian-kernel KDE with a diagonal bandwidth.
pub fn fit_kde(s: &SampleSet, rule: &BandwidthRule) -> Result<Belief> {
    if s.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, got: s.len() });
    }
    let bandwidth = match rule {
        BandwidthRule::ScottsRule => {
            let sd = s.col_std();
            if sd.iter().any(|v| *v == 0.0) {
                return Err(Error::DegenerateSamples(
                    "per-dimension standard deviation is zero".into(),
                ));
            }
            let factor = (s.len() as f64).powf(-1.0 / (s.dim() as f64 + 4.0));
            sd * factor
        }
        BandwidthRule::Fixed(h) => {
            if h.len() != s.dim() {
                return Err(Error::DimensionMismatch { expected: s.dim(), got: h.len() });
            }
            if h.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::DomainError(
                    "fixed bandwidth entries must be strictly positive".into(),
                ));
            }
            h.clone()
        }
    };
    Belief::kde(s.clone(), bandwidth)
}
