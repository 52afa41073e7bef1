//! Run configuration, seed discipline and the experiment pipelines behind the
//! `mba` command-line tool. Everything is driven by one JSON config per run
//! plus a required master seed; repeated invocations are byte-identical.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use mba_core::belief::{Belief, GridPmf, SampleSet};
use mba_core::error::{Error, Result};
use mba_core::meta_model::HierarchicalSpec;
use mba_core::sampler::McmcConfig;
use mba_core::updater::{PhiGrid, ThetaGrid};

pub mod pipelines;

/// Fixed seed streams: child seeds are derived as child_seed(master, STREAM + k)
/// so adding a study or a stage never perturbs the randomness of earlier ones.
pub mod streams {
    pub const EFFECTS: u64 = 1;
    pub const SERIES: u64 = 100; // + study index
    pub const ABC: u64 = 1_000; // + study index
    pub const BOOTSTRAP: u64 = 2_000; // + study index
    pub const MCMC: u64 = 3_000;
    pub const SIR: u64 = 3_001;
    pub const REMA: u64 = 3_100;
    pub const FEMA: u64 = 3_200;
    pub const NAIVE: u64 = 3_300;
    pub const GRID: u64 = 3_400;
    pub const CONCENTRATION: u64 = 4_000; // + seed index
}

/// Master seed resolution: command-line flag, then config field, then the
/// MBA_SEED environment variable. Wall-clock seeding is never used.
pub fn resolve_seed(flag: Option<u64>, config_seed: Option<u64>) -> Result<u64> {
    flag.or(config_seed)
        .or_else(|| std::env::var("MBA_SEED").ok().and_then(|s| s.parse().ok()))
        .ok_or_else(|| {
            Error::InvalidInput(
                "no master seed: pass --seed, set \"seed\" in the config, or export MBA_SEED"
                    .into(),
            )
        })
}

/// Exit-code classes: 1 for input problems, 2 for numeric failures, 3 for
/// exhausted budgets.
pub fn exit_class(err: &Error) -> i32 {
    match err {
        Error::BudgetExhausted { .. } => 3,
        Error::DegenerateSamples(_)
        | Error::NonFiniteEstimate
        | Error::AllZeroMass
        | Error::NonFiniteStart { .. }
        | Error::ChainDivergence { .. } => 2,
        _ => 1,
    }
}

// --- config types -------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_warmup: usize,
    pub n_keep: usize,
    pub n_chains: usize,
    pub thin: usize,
    pub init_jitter: f64,
    pub adapt_target: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self {
            n_warmup: d.n_warmup,
            n_keep: d.n_keep,
            n_chains: d.n_chains,
            thin: d.thin,
            init_jitter: d.init_jitter,
            adapt_target: d.adapt_target,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            n_warmup: self.n_warmup,
            n_keep: self.n_keep,
            n_chains: self.n_chains,
            thin: self.thin,
            init_jitter: self.init_jitter,
            adapt_target: self.adapt_target,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridConfig {
    Bernoulli {
        #[serde(default = "default_grid_points")]
        points: usize,
    },
    #[serde(rename = "gaussian_1d")]
    Gaussian1d {
        mu_range: (f64, f64),
        #[serde(default = "default_axis_points")]
        n_mu: usize,
        var_range: (f64, f64),
        #[serde(default = "default_axis_points")]
        n_var: usize,
    },
}

fn default_grid_points() -> usize {
    2001
}

fn default_axis_points() -> usize {
    200
}

impl GridConfig {
    pub fn build(&self) -> Result<PhiGrid> {
        match self {
            GridConfig::Bernoulli { points } => PhiGrid::bernoulli_uniform(*points),
            GridConfig::Gaussian1d { mu_range, n_mu, var_range, n_var } => {
                PhiGrid::gaussian_mu_var(*mu_range, *n_mu, *var_range, *n_var)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThetaGridConfig {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_axis_points")]
    pub n: usize,
}

/// A belief input: either a posterior-sample CSV to fit, or an inline belief.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BeliefInput {
    Csv { csv: PathBuf },
    Inline(BeliefWire),
}

/// Inline belief wire format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BeliefWire {
    SoftBernoulli { p1: f64 },
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    Dirac { point: Vec<f64> },
    GridPmf { support: Vec<Vec<f64>>, probs: Vec<f64> },
    Kde { samples: Vec<Vec<f64>>, bandwidth: Vec<f64> },
}

impl BeliefWire {
    pub fn to_belief(&self) -> Result<Belief> {
        match self {
            BeliefWire::SoftBernoulli { p1 } => Belief::soft_bernoulli(*p1),
            BeliefWire::Gaussian { mean, cov } => {
                let d = mean.len();
                if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidInput("gaussian cov must be d x d".into()));
                }
                Belief::gaussian(
                    DVector::from_vec(mean.clone()),
                    nalgebra::DMatrix::from_fn(d, d, |i, j| cov[i][j]),
                )
            }
            BeliefWire::Dirac { point } => Ok(Belief::dirac(DVector::from_vec(point.clone()))),
            BeliefWire::GridPmf { support, probs } => Ok(Belief::Grid(GridPmf::new(
                support.iter().map(|p| DVector::from_vec(p.clone())).collect(),
                probs.clone(),
            )?)),
            BeliefWire::Kde { samples, bandwidth } => Belief::kde(
                SampleSet::from_rows(samples.clone())?,
                DVector::from_vec(bandwidth.clone()),
            ),
        }
    }

    pub fn from_belief(b: &Belief) -> Result<Self> {
        Ok(match b {
            Belief::SoftBernoulli(p1) => BeliefWire::SoftBernoulli { p1: *p1 },
            Belief::Gaussian { mean, cov } => BeliefWire::Gaussian {
                mean: mean.iter().copied().collect(),
                cov: (0..cov.nrows())
                    .map(|i| (0..cov.ncols()).map(|j| cov[(i, j)]).collect())
                    .collect(),
            },
            Belief::Dirac(p) => BeliefWire::Dirac { point: p.iter().copied().collect() },
            Belief::Grid(g) => BeliefWire::GridPmf {
                support: g.support().iter().map(|p| p.iter().copied().collect()).collect(),
                probs: g.probs().to_vec(),
            },
            Belief::Kde { samples, bandwidth } => BeliefWire::Kde {
                samples: samples.rows().iter().map(|r| r.iter().copied().collect()).collect(),
                bandwidth: bandwidth.iter().copied().collect(),
            },
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpdateConfig {
    pub spec: HierarchicalSpec,
    pub beliefs: Vec<BeliefInput>,
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub theta_grid: Option<ThetaGridConfig>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
    /// When present (Bernoulli exact mode, soft-belief inputs only): emit one
    /// posterior curve per probability, each with the shared soft value
    /// substituted into every study.
    #[serde(default)]
    pub soft_sweep: Option<Vec<f64>>,
    /// One-based study index for local updates; the --study flag overrides.
    #[serde(default)]
    pub study: Option<usize>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_mc_draws() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ma2Config {
    #[serde(default = "default_n_studies")]
    pub n_studies: usize,
    #[serde(default = "default_series_len")]
    pub series_len: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_n_accept")]
    pub n_accept: usize,
    #[serde(default = "default_max_proposals")]
    pub max_proposals: u64,
    /// Hyperprior; the bivariate Gaussian/inverse-Wishart default covers the
    /// identifiability triangle.
    #[serde(default)]
    pub spec: Option<HierarchicalSpec>,
    /// The joint chain couples the global mean with twelve effect blocks, so
    /// the default thins by 10 to keep 2000 low-autocorrelation draws.
    #[serde(default = "default_ma2_sampler")]
    pub sampler: SamplerConfig,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_replicates: usize,
    #[serde(default = "default_css_grid")]
    pub css_grid: usize,
    #[serde(default = "default_css_grid_bootstrap")]
    pub css_grid_bootstrap: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_n_studies() -> usize {
    12
}

fn default_series_len() -> usize {
    10
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_n_accept() -> usize {
    1000
}

fn default_max_proposals() -> u64 {
    10_000_000
}

fn default_ma2_sampler() -> SamplerConfig {
    SamplerConfig { thin: 10, ..SamplerConfig::default() }
}

fn default_bootstrap() -> usize {
    200
}

fn default_css_grid() -> usize {
    200
}

fn default_css_grid_bootstrap() -> usize {
    60
}

/// The default MA(2) hyperprior: mean prior centered in the triangle with
/// covariance wide enough to cover it, and an inverse-Wishart whose mean is
/// its scale matrix (nu = d + 2).
pub fn default_ma2_spec() -> HierarchicalSpec {
    HierarchicalSpec::gaussian_niw(
        DVector::from_vec(vec![0.5, 0.0]),
        nalgebra::DMatrix::from_vec(2, 2, vec![0.4, 0.05, 0.05, 0.1]),
        4.0,
        nalgebra::DMatrix::from_vec(2, 2, vec![0.4, 0.1, 0.1, 0.2]),
    )
    .expect("static hyperparameters")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    #[serde(default = "default_atoms")]
    pub atoms: Vec<f64>,
    #[serde(default = "default_phi_true")]
    pub phi_true: f64,
    /// Soft value emitted when the latent effect is 1 (its complement when 0).
    #[serde(default = "default_emit_hi")]
    pub emit_hi: f64,
    #[serde(default = "default_j_sweep")]
    pub j_sweep: Vec<usize>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_atoms() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

fn default_phi_true() -> f64 {
    0.7
}

fn default_emit_hi() -> f64 {
    0.9
}

fn default_j_sweep() -> Vec<usize> {
    vec![1, 2, 5, 10, 20, 50, 100, 200, 500]
}

fn default_n_seeds() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbcRunConfig {
    #[serde(default)]
    pub observed_summaries: Option<Vec<f64>>,
    #[serde(default)]
    pub observed_series_csv: Option<PathBuf>,
    #[serde(default = "default_series_len")]
    pub series_len: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_n_accept")]
    pub n_accept: usize,
    #[serde(default = "default_max_proposals")]
    pub max_proposals: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitBeliefConfig {
    pub input_csv: PathBuf,
    #[serde(default = "default_fit_kind")]
    pub kind: String,
    pub out: PathBuf,
}

fn default_fit_kind() -> String {
    "gaussian".into()
}

pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("bad config {}: {e}", path.display())))
}

/// Reads a single-column time series CSV with header `y`.
pub fn read_series_csv(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("y") => {}
        other => {
            return Err(Error::InvalidInput(format!(
                "series CSV must start with header 'y', got {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("series row {}: bad value {line:?}", i + 2)))?;
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("series row {}: non-finite value", i + 2)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("series CSV has no data rows".into()));
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Loaded belief pair: the truth-facing belief and its Gaussian approximation
/// (identical for inline parametric inputs).
pub struct LoadedBelief {
    pub true_belief: Belief,
    pub approx: Belief,
}

pub fn load_beliefs(inputs: &[BeliefInput]) -> Result<Vec<LoadedBelief>> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no belief inputs provided".into()));
    }
    inputs
        .iter()
        .map(|input| match input {
            BeliefInput::Csv { csv } => {
                if !csv.exists() {
                    return Err(Error::InvalidInput(format!(
                        "belief input does not exist: {}",
                        csv.display()
                    )));
                }
                let samples = SampleSet::read_csv(csv)?;
                let approx = mba_core::belief::fit_gaussian(&samples)?;
                let true_belief =
                    mba_core::belief::fit_kde(&samples, &mba_core::belief::BandwidthRule::ScottsRule)?;
                Ok(LoadedBelief { true_belief, approx })
            }
            BeliefInput::Inline(wire) => {
                let b = wire.to_belief()?;
                Ok(LoadedBelief { true_belief: b.clone(), approx: b })
            }
        })
        .collect()
}

pub fn build_theta_grid(cfg: &ThetaGridConfig) -> Result<ThetaGrid> {
    ThetaGrid::uniform_1d(cfg.lo, cfg.hi, cfg.n)
}
