//! The experiment pipelines: global/local updates over supplied beliefs, the
//! end-to-end MA(2) study, the discrete concentration sweep, single ABC runs
//! and belief fitting.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mba_core::abc::{abc_ma2_study, generate_effects, ma2_summaries, simulate_ma2, AbcConfig};
use mba_core::baselines::{
    bootstrap_cov, css_estimate, fema_fit, naive_fit, rema_fit, StudyEstimate,
};
use mba_core::belief::{Belief, SampleSet};
use mba_core::error::{Error, Result};
use mba_core::meta_model::{GlobalParam, HierarchicalSpec, McBudget};
use mba_core::sampler::{
    diagnostics, sample_joint, sir_refine, write_joint_draws_csv, JointDraw, McmcRun,
};
use mba_core::stats::{child_seed, logit, ls_slope};
use mba_core::updater::{global_update, global_update_with_prior, local_update, PhiGrid, ThetaGrid};

use crate::{
    build_theta_grid, default_ma2_spec, load_beliefs, streams, write_json, AbcRunConfig,
    ConcentrationConfig, FitBeliefConfig, GridConfig, Ma2Config, UpdateConfig,
};

fn ensure_out_dir(dir: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn default_grid_for(spec: &HierarchicalSpec, cfg: &UpdateConfig) -> Result<PhiGrid> {
    match (&cfg.grid, spec) {
        (Some(g), _) => g.build(),
        (None, HierarchicalSpec::BetaBernoulli { .. }) => {
            GridConfig::Bernoulli { points: 2001 }.build()
        }
        (None, _) => Err(Error::InvalidInput(
            "exact mode for a Gaussian model needs a \"grid\" entry with mu/var ranges".into(),
        )),
    }
}

fn exact_supported(spec: &HierarchicalSpec) -> Result<()> {
    match spec {
        HierarchicalSpec::BetaBernoulli { .. } => Ok(()),
        _ if spec.theta_dim() == 1 => Ok(()),
        _ => Err(Error::UnsupportedSpec(
            "exact mode covers the Bernoulli model and one-dimensional Gaussian models".into(),
        )),
    }
}

/// Diagnostics sidecar written next to draw CSVs.
#[derive(Serialize)]
struct RunDiagnostics {
    seed: u64,
    n_draws: usize,
    max_r_hat: f64,
    r_hat: Vec<(String, f64)>,
    accept_rates: Vec<Vec<f64>>,
    sir_ess: Option<f64>,
    sir_weight_collapse: Option<bool>,
}

struct SampledGlobal {
    run: McmcRun,
    resampled: Vec<JointDraw>,
    sir_ess: f64,
    sir_weight_collapse: bool,
}

fn run_sampler_path(cfg: &UpdateConfig, master_seed: u64) -> Result<SampledGlobal> {
    let loaded = load_beliefs(&cfg.beliefs)?;
    let approx: Vec<Belief> = loaded.iter().map(|l| l.approx.clone()).collect();
    let true_beliefs: Vec<Belief> = loaded.iter().map(|l| l.true_belief.clone()).collect();
    for b in &approx {
        if !matches!(b, Belief::Gaussian { .. }) {
            return Err(Error::UnsupportedBelief(
                "sampler mode needs Gaussian approximations: pass sample CSVs or gaussian \
                 beliefs, or use --exact"
                    .into(),
            ));
        }
    }
    let mcmc = cfg.sampler.with_seed(child_seed(master_seed, streams::MCMC));
    let run = sample_joint(&cfg.spec, &approx, &mcmc)?;
    let pooled = run.pooled();
    let sir = sir_refine(&pooled, &true_beliefs, &approx, child_seed(master_seed, streams::SIR))?;
    Ok(SampledGlobal {
        run,
        resampled: sir.resampled,
        sir_ess: sir.weighted.ess,
        sir_weight_collapse: sir.weighted.weight_collapse,
    })
}

/// Consensus update over the global parameter. Exact mode writes a grid pmf
/// CSV; sampler mode writes raw and resampled draw CSVs plus diagnostics.
pub fn update_global(cfg: &UpdateConfig, master_seed: u64) -> Result<Vec<PathBuf>> {
    ensure_out_dir(&cfg.out_dir)?;
    let mut written = Vec::new();
    if cfg.exact {
        exact_supported(&cfg.spec)?;
        let grid = default_grid_for(&cfg.spec, cfg)?;
        let budget = McBudget::new(cfg.mc_draws)?;
        if let Some(sweep) = &cfg.soft_sweep {
            let loaded = load_beliefs(&cfg.beliefs)?;
            if !loaded.iter().all(|l| matches!(l.true_belief, Belief::SoftBernoulli(_))) {
                return Err(Error::InvalidInput(
                    "soft_sweep requires soft_bernoulli belief inputs".into(),
                ));
            }
            let j = loaded.len();
            for (idx, p) in sweep.iter().enumerate() {
                let beliefs = vec![Belief::soft_bernoulli(*p)?; j];
                let mut rng = ChaCha8Rng::seed_from_u64(child_seed(master_seed, streams::GRID));
                let pmf = global_update(&cfg.spec, &beliefs, &grid, &budget, &mut rng)?;
                let path = cfg.out_dir.join(format!("curve_{idx:02}_p{p}.csv"));
                pmf.write_csv(&path, grid.weights(), "phi")?;
                written.push(path);
            }
        } else {
            let loaded = load_beliefs(&cfg.beliefs)?;
            let beliefs: Vec<Belief> = loaded.into_iter().map(|l| l.true_belief).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(master_seed, streams::GRID));
            let pmf = global_update(&cfg.spec, &beliefs, &grid, &budget, &mut rng)?;
            let path = cfg.out_dir.join("global_pmf.csv");
            pmf.write_csv(&path, grid.weights(), "phi")?;
            written.push(path);
        }
    } else {
        let sampled = run_sampler_path(cfg, master_seed)?;
        let raw_path = cfg.out_dir.join("draws.csv");
        write_joint_draws_csv(&raw_path, &sampled.run.chains, &sampled.run.param_names)?;
        let res_path = cfg.out_dir.join("draws_resampled.csv");
        write_joint_draws_csv(
            &res_path,
            std::slice::from_ref(&sampled.resampled),
            &sampled.run.param_names,
        )?;
        let diag = diagnostics(&sampled.run);
        let diag_path = cfg.out_dir.join("diagnostics.json");
        write_json(
            &diag_path,
            &RunDiagnostics {
                seed: master_seed,
                n_draws: sampled.resampled.len(),
                max_r_hat: diag.max_r_hat,
                r_hat: diag.r_hat,
                accept_rates: diag.accept_rates,
                sir_ess: Some(sampled.sir_ess),
                sir_weight_collapse: Some(sampled.sir_weight_collapse),
            },
        )?;
        written.extend([raw_path, res_path, diag_path]);
    }
    Ok(written)
}

/// Shrinkage update of one study's belief (`study` is one-based).
pub fn update_local(cfg: &UpdateConfig, study: usize, master_seed: u64) -> Result<Vec<PathBuf>> {
    ensure_out_dir(&cfg.out_dir)?;
    let n = cfg.beliefs.len();
    if study == 0 || study > n {
        return Err(Error::IndexOutOfRange { index: study, len: n });
    }
    let j_prime = study - 1;
    let mut written = Vec::new();
    if cfg.exact {
        exact_supported(&cfg.spec)?;
        let phi_grid = default_grid_for(&cfg.spec, cfg)?;
        let theta_grid = match (&cfg.spec, &cfg.theta_grid) {
            (HierarchicalSpec::BetaBernoulli { .. }, _) => ThetaGrid::binary(),
            (_, Some(tg)) => build_theta_grid(tg)?,
            (_, None) => {
                return Err(Error::InvalidInput(
                    "exact local updates for a Gaussian model need a \"theta_grid\" entry".into(),
                ))
            }
        };
        let loaded = load_beliefs(&cfg.beliefs)?;
        let beliefs: Vec<Belief> = loaded.into_iter().map(|l| l.true_belief).collect();
        let budget = McBudget::new(cfg.mc_draws)?;
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(master_seed, streams::GRID));
        let pmf = local_update(&cfg.spec, &beliefs, j_prime, &theta_grid, &phi_grid, &budget, &mut rng)?;
        let path = cfg.out_dir.join(format!("local_pmf_study_{study}.csv"));
        pmf.write_csv(&path, theta_grid.weights(), "theta")?;
        written.push(path);
    } else {
        let sampled = run_sampler_path(cfg, master_seed)?;
        let rows: Vec<DVector<f64>> =
            sampled.resampled.iter().map(|d| d.thetas[j_prime].clone()).collect();
        let samples = SampleSet::new(rows)?;
        let path = cfg.out_dir.join(format!("local_draws_study_{study}.csv"));
        samples.write_csv(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Serialize)]
struct StudyMeta {
    study: usize,
    true_theta: Vec<f64>,
    observed_summaries: Vec<f64>,
    epsilon: f64,
    n_accepted: usize,
    n_proposals: u64,
    acceptance_rate: f64,
    exhausted: bool,
    seed: u64,
}

/// Everything the MA(2) experiment reports, also written as metrics.json.
#[derive(Debug, Clone, Serialize)]
pub struct Ma2Report {
    pub seed: u64,
    pub true_population_mean: Vec<f64>,
    pub mu_mean: BTreeMap<String, Vec<f64>>,
    /// Euclidean distance of each method's posterior mean of mu to the true
    /// population mean.
    pub mu_mean_error: BTreeMap<String, f64>,
    /// Trace of the posterior covariance of mu per method.
    pub mu_var_trace: BTreeMap<String, f64>,
    pub fema_var_below_rema: bool,
    /// Studies whose updated local mean is closer to the global mean than the
    /// original belief mean was.
    pub shrinkage_closer_count: usize,
    /// Studies whose updated local mean lies componentwise between the
    /// original mean and the global mean.
    pub betweenness_count: usize,
    pub local_mean_error_before: Vec<f64>,
    pub local_mean_error_after: Vec<f64>,
    pub abc_acceptance_rates: Vec<f64>,
    pub abc_exhausted: Vec<bool>,
    pub sir_ess: f64,
    pub sir_weight_collapse: bool,
    pub max_r_hat_mu: f64,
}

fn write_fema_draws_csv(path: &std::path::Path, run: &mba_core::baselines::FemaRun) -> Result<()> {
    use std::io::Write;
    let d = run.chains[0][0].len();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let names: Vec<String> = (0..d).map(|k| format!("mu_{k}")).collect();
    writeln!(w, "chain,iter,{}", names.join(","))?;
    for (c, chain) in run.chains.iter().enumerate() {
        for (i, mu) in chain.iter().enumerate() {
            let fields: Vec<String> = mu.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{c},{i},{}", fields.join(","))?;
        }
    }
    Ok(())
}

fn phi_mu(draw: &JointDraw) -> DVector<f64> {
    match &draw.phi {
        GlobalParam::GaussianPhi { mu, .. } => mu.clone(),
        GlobalParam::BetaBernoulliPhi(p) => DVector::from_vec(vec![*p]),
    }
}

fn mean_and_var_trace(mus: &[DVector<f64>]) -> (DVector<f64>, f64) {
    let d = mus[0].len();
    let n = mus.len() as f64;
    let mean = mus.iter().fold(DVector::zeros(d), |acc, m| acc + m) / n;
    let trace = mus
        .iter()
        .map(|m| (m - &mean).norm_squared())
        .sum::<f64>()
        / (n - 1.0);
    (mean, trace)
}

/// End-to-end study: simulate effects and short series, infer per-study
/// posteriors by rejection ABC, fuse them (joint MCMC plus importance
/// resampling), and compare against random-effects, fixed-effects and naive
/// baselines.
pub fn ma2_experiment(cfg: &Ma2Config, master_seed: u64) -> Result<Ma2Report> {
    ensure_out_dir(&cfg.out_dir)?;
    let spec = cfg.spec.clone().unwrap_or_else(default_ma2_spec);
    if spec.theta_dim() != 2 {
        return Err(Error::InvalidInput("the MA(2) experiment needs a 2-d effect model".into()));
    }
    let j = cfg.n_studies;

    let mut rng_eff = ChaCha8Rng::seed_from_u64(child_seed(master_seed, streams::EFFECTS));
    let effects = generate_effects(j, &mut rng_eff);

    let abc_cfg = AbcConfig {
        epsilon: cfg.epsilon,
        n_accept: cfg.n_accept,
        max_proposals: cfg.max_proposals,
        summary_weights: None,
    };
    let mut study_samples = Vec::with_capacity(j);
    let mut abc_rates = Vec::with_capacity(j);
    let mut abc_exhausted = Vec::with_capacity(j);
    let mut series_all = Vec::with_capacity(j);
    for (idx, effect) in effects.iter().enumerate() {
        let study = idx + 1;
        let series_seed = child_seed(master_seed, streams::SERIES + idx as u64);
        let series = simulate_ma2(effect, cfg.series_len, &mut ChaCha8Rng::seed_from_u64(series_seed));
        let observed = ma2_summaries(&series)?;
        let abc_seed = child_seed(master_seed, streams::ABC + idx as u64);
        let out = abc_ma2_study(&observed, cfg.series_len, &abc_cfg, abc_seed)?;
        out.samples.write_csv(cfg.out_dir.join(format!("study_{study}_posterior.csv")))?;
        write_json(
            &cfg.out_dir.join(format!("study_{study}_meta.json")),
            &StudyMeta {
                study,
                true_theta: vec![effect.theta1, effect.theta2],
                observed_summaries: observed,
                epsilon: cfg.epsilon,
                n_accepted: out.samples.len(),
                n_proposals: out.n_proposals,
                acceptance_rate: out.acceptance_rate,
                exhausted: out.exhausted,
                seed: abc_seed,
            },
        )?;
        eprintln!(
            "study {study}: accepted {} of {} proposals (rate {:.4}{})",
            out.samples.len(),
            out.n_proposals,
            out.acceptance_rate,
            if out.exhausted { ", budget exhausted" } else { "" }
        );
        abc_rates.push(out.acceptance_rate);
        abc_exhausted.push(out.exhausted);
        study_samples.push(out.samples);
        series_all.push(series);
    }

    // Parametric approximations and KDE densities of the study posteriors.
    let mut approx = Vec::with_capacity(j);
    let mut kdes = Vec::with_capacity(j);
    let mut abc_means = Vec::with_capacity(j);
    for s in &study_samples {
        approx.push(mba_core::belief::fit_gaussian(s)?);
        kdes.push(mba_core::belief::fit_kde(s, &mba_core::belief::BandwidthRule::ScottsRule)?);
        abc_means.push(s.mean());
    }

    // The fused analysis.
    let mcmc = cfg.sampler.with_seed(child_seed(master_seed, streams::MCMC));
    let run = sample_joint(&spec, &approx, &mcmc)?;
    write_joint_draws_csv(cfg.out_dir.join("mba_draws.csv"), &run.chains, &run.param_names)?;
    let diag = diagnostics(&run);
    let max_r_hat_mu = diag
        .r_hat
        .iter()
        .filter(|(name, _)| name.starts_with("mu_"))
        .map(|(_, r)| *r)
        .fold(f64::NEG_INFINITY, f64::max);
    let pooled = run.pooled();
    let sir = sir_refine(&pooled, &kdes, &approx, child_seed(master_seed, streams::SIR))?;
    write_joint_draws_csv(
        cfg.out_dir.join("mba_resampled.csv"),
        std::slice::from_ref(&sir.resampled),
        &run.param_names,
    )?;
    write_json(
        &cfg.out_dir.join("diagnostics.json"),
        &RunDiagnostics {
            seed: master_seed,
            n_draws: sir.resampled.len(),
            max_r_hat: diag.max_r_hat,
            r_hat: diag.r_hat.clone(),
            accept_rates: diag.accept_rates.clone(),
            sir_ess: Some(sir.weighted.ess),
            sir_weight_collapse: Some(sir.weighted.weight_collapse),
        },
    )?;

    let mba_mus: Vec<DVector<f64>> = sir.resampled.iter().map(phi_mu).collect();
    let (mba_mean, mba_trace) = mean_and_var_trace(&mba_mus);

    // Frequentist inputs for the baselines.
    let mut estimates = Vec::with_capacity(j);
    for (idx, series) in series_all.iter().enumerate() {
        let theta_hat = css_estimate(series, cfg.css_grid)?;
        let mut rng_boot =
            ChaCha8Rng::seed_from_u64(child_seed(master_seed, streams::BOOTSTRAP + idx as u64));
        let sigma_hat = bootstrap_cov(
            &theta_hat,
            cfg.series_len,
            cfg.bootstrap_replicates,
            cfg.css_grid_bootstrap,
            &mut rng_boot,
        )?;
        estimates.push(StudyEstimate::new(theta_hat.as_vector(), sigma_hat)?);
    }
    write_json(&cfg.out_dir.join("estimates.json"), &estimates)?;

    let rema = rema_fit(&estimates, &spec, &cfg.sampler.with_seed(child_seed(master_seed, streams::REMA)))?;
    write_joint_draws_csv(cfg.out_dir.join("rema_draws.csv"), &rema.chains, &rema.param_names)?;
    let rema_mus: Vec<DVector<f64>> = rema.pooled().iter().map(phi_mu).collect();
    let (rema_mean, rema_trace) = mean_and_var_trace(&rema_mus);

    let (prior_m, prior_v) = match &spec {
        HierarchicalSpec::GaussianNiw { m, v, .. } => (m.clone(), v.clone()),
        _ => {
            return Err(Error::UnsupportedSpec(
                "the fixed-effects baseline needs the Gaussian/inverse-Wishart hyperprior".into(),
            ))
        }
    };
    let fema = fema_fit(
        &estimates,
        &prior_m,
        &prior_v,
        &cfg.sampler.with_seed(child_seed(master_seed, streams::FEMA)),
    )?;
    write_fema_draws_csv(&cfg.out_dir.join("fema_draws.csv"), &fema)?;
    let fema_mus = fema.pooled();
    let (fema_mean, fema_trace) = mean_and_var_trace(&fema_mus);

    let naive = naive_fit(
        &abc_means,
        &spec,
        &cfg.sampler.with_seed(child_seed(master_seed, streams::NAIVE)),
    )?;
    write_joint_draws_csv(cfg.out_dir.join("naive_draws.csv"), &naive.chains, &naive.param_names)?;
    let naive_mus: Vec<DVector<f64>> = naive.pooled().iter().map(phi_mu).collect();
    let (naive_mean, naive_trace) = mean_and_var_trace(&naive_mus);

    // Shrinkage of the local updates toward the global mean.
    let truth = DVector::from_vec(vec![0.6, 0.2]);
    let mut shrinkage_closer = 0;
    let mut betweenness = 0;
    let mut err_before = Vec::with_capacity(j);
    let mut err_after = Vec::with_capacity(j);
    for idx in 0..j {
        let updated: Vec<DVector<f64>> =
            sir.resampled.iter().map(|d| d.thetas[idx].clone()).collect();
        let (upd_mean, _) = mean_and_var_trace(&updated);
        let orig = &abc_means[idx];
        if (&upd_mean - &mba_mean).norm() < (orig - &mba_mean).norm() {
            shrinkage_closer += 1;
        }
        // Componentwise betweenness, with slack for the Monte Carlo error of
        // the resampled means: the interval degenerates when a study already
        // agrees with the consensus.
        let slack = 0.02;
        let between = (0..2).all(|k| {
            let lo = orig[k].min(mba_mean[k]) - slack;
            let hi = orig[k].max(mba_mean[k]) + slack;
            (lo..=hi).contains(&upd_mean[k])
        });
        if between {
            betweenness += 1;
        }
        let true_theta = DVector::from_vec(vec![effects[idx].theta1, effects[idx].theta2]);
        err_before.push((orig - &true_theta).norm());
        err_after.push((&upd_mean - &true_theta).norm());
    }

    let mut mu_mean = BTreeMap::new();
    let mut mu_mean_error = BTreeMap::new();
    let mut mu_var_trace = BTreeMap::new();
    for (name, mean, trace) in [
        ("mba", &mba_mean, mba_trace),
        ("rema", &rema_mean, rema_trace),
        ("fema", &fema_mean, fema_trace),
        ("naive", &naive_mean, naive_trace),
    ] {
        mu_mean.insert(name.to_string(), mean.iter().copied().collect::<Vec<f64>>());
        mu_mean_error.insert(name.to_string(), (mean - &truth).norm());
        mu_var_trace.insert(name.to_string(), trace);
    }

    let report = Ma2Report {
        seed: master_seed,
        true_population_mean: vec![0.6, 0.2],
        fema_var_below_rema: fema_trace < rema_trace,
        mu_mean,
        mu_mean_error,
        mu_var_trace,
        shrinkage_closer_count: shrinkage_closer,
        betweenness_count: betweenness,
        local_mean_error_before: err_before,
        local_mean_error_after: err_after,
        abc_acceptance_rates: abc_rates,
        abc_exhausted: abc_exhausted.clone(),
        sir_ess: sir.weighted.ess,
        sir_weight_collapse: sir.weighted.weight_collapse,
        max_r_hat_mu,
    };
    write_json(&cfg.out_dir.join("metrics.json"), &report)?;

    if abc_exhausted.iter().any(|e| *e) {
        return Err(Error::BudgetExhausted {
            accepted: study_samples.iter().map(|s| s.len()).min().unwrap_or(0),
            requested: cfg.n_accept,
        });
    }
    Ok(report)
}

/// Concentration sweep output for one seed.
#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationSeed {
    pub seed_index: usize,
    /// (J, posterior mass at the true atom), including the J = 0 prior row.
    pub mass_at_true: Vec<(usize, f64)>,
    pub logit_slope: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationReport {
    pub atoms: Vec<f64>,
    pub phi_true: f64,
    pub emit_hi: f64,
    pub emit_lo: f64,
    /// Atom minimizing the KL divergence from the true emission distribution
    /// to the model's implied emission distribution; the mass condenses here.
    pub kl_optimal_atom: f64,
    pub per_seed: Vec<ConcentrationSeed>,
    pub mean_mass_at_true: Vec<(usize, f64)>,
    pub seeds_over_99_at_max: usize,
}

/// Exact KL divergence between two Bernoulli laws.
fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Discrete-support concentration experiment: effects drawn at the true atom,
/// emitted as soft binary beliefs, fused exactly on the atom grid. Reports the
/// posterior mass at the true atom as the number of studies grows.
pub fn concentration(cfg: &ConcentrationConfig, master_seed: u64) -> Result<ConcentrationReport> {
    ensure_out_dir(&cfg.out_dir)?;
    if !cfg.atoms.contains(&cfg.phi_true) {
        return Err(Error::InvalidInput("phi_true must be one of the atoms".into()));
    }
    if !(0.0..=1.0).contains(&cfg.emit_hi) {
        return Err(Error::InvalidInput("emit_hi must lie in [0, 1]".into()));
    }
    let emit_lo = 1.0 - cfg.emit_hi;
    let grid = PhiGrid::bernoulli_atoms(&cfg.atoms)?;
    let true_idx = cfg.atoms.iter().position(|a| *a == cfg.phi_true).unwrap();
    let prior_log: Vec<f64> = vec![(1.0 / cfg.atoms.len() as f64).ln(); cfg.atoms.len()];
    let spec = HierarchicalSpec::beta_bernoulli(1.0, 1.0)?;
    let budget = McBudget::default();

    // The model's implied probability of a hi-emission at atom a is
    // a * emit_hi + (1 - a) * emit_lo; the posterior mass condenses on the
    // atom whose implied law is KL-closest to the true emission law.
    let kl_optimal_atom = cfg
        .atoms
        .iter()
        .copied()
        .min_by(|a, b| {
            let ka = bernoulli_kl(cfg.phi_true, a * cfg.emit_hi + (1.0 - a) * emit_lo);
            let kb = bernoulli_kl(cfg.phi_true, b * cfg.emit_hi + (1.0 - b) * emit_lo);
            ka.partial_cmp(&kb).unwrap()
        })
        .unwrap();

    let j_max = cfg.j_sweep.iter().copied().max().unwrap_or(0);
    if j_max == 0 {
        return Err(Error::InvalidInput("j_sweep must contain positive study counts".into()));
    }

    let mut per_seed = Vec::with_capacity(cfg.n_seeds);
    let mut csv = String::from("seed,j,q_star_true\n");
    for s in 0..cfg.n_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(
            master_seed,
            streams::CONCENTRATION + s as u64,
        ));
        let beliefs: Vec<Belief> = (0..j_max)
            .map(|_| {
                let effect = rand::Rng::random::<f64>(&mut rng) < cfg.phi_true;
                Belief::soft_bernoulli(if effect { cfg.emit_hi } else { emit_lo })
            })
            .collect::<Result<_>>()?;
        let mut mass_at_true = vec![(0usize, 1.0 / cfg.atoms.len() as f64)];
        for jj in &cfg.j_sweep {
            let pmf = global_update_with_prior(
                &spec,
                &prior_log,
                &beliefs[..*jj],
                &grid,
                &budget,
                &mut ChaCha8Rng::seed_from_u64(0),
            )?;
            mass_at_true.push((*jj, pmf.probs()[true_idx]));
        }
        for (jj, q) in &mass_at_true {
            csv.push_str(&format!("{s},{jj},{q}\n"));
        }
        let xs: Vec<f64> = mass_at_true.iter().map(|(jj, _)| *jj as f64).collect();
        // Clamp away hard zeros and ones before the logit.
        let ys: Vec<f64> = mass_at_true
            .iter()
            .map(|(_, q)| logit(q.clamp(1e-15, 1.0 - 1e-15)))
            .collect();
        per_seed.push(ConcentrationSeed {
            seed_index: s,
            logit_slope: ls_slope(&xs, &ys),
            mass_at_true,
        });
    }
    std::fs::write(cfg.out_dir.join("concentration.csv"), csv)?;

    let mut mean_mass = Vec::new();
    for (row, (jj, _)) in per_seed[0].mass_at_true.iter().enumerate() {
        let mean = per_seed.iter().map(|s| s.mass_at_true[row].1).sum::<f64>()
            / per_seed.len() as f64;
        mean_mass.push((*jj, mean));
    }
    let seeds_over_99 = per_seed
        .iter()
        .filter(|s| s.mass_at_true.last().unwrap().1 > 0.99)
        .count();

    let report = ConcentrationReport {
        atoms: cfg.atoms.clone(),
        phi_true: cfg.phi_true,
        emit_hi: cfg.emit_hi,
        emit_lo,
        kl_optimal_atom,
        per_seed,
        mean_mass_at_true: mean_mass,
        seeds_over_99_at_max: seeds_over_99,
    };
    write_json(&cfg.out_dir.join("concentration_summary.json"), &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct AbcRunMeta {
    observed_summaries: Vec<f64>,
    epsilon: f64,
    n_accepted: usize,
    n_proposals: u64,
    acceptance_rate: f64,
    exhausted: bool,
    seed: u64,
}

/// One rejection-ABC inference: writes the accepted parameters and a metadata
/// sidecar. An exhausted budget still writes the partial set, then surfaces
/// the budget error.
pub fn abc_run(cfg: &AbcRunConfig, master_seed: u64) -> Result<Vec<PathBuf>> {
    ensure_out_dir(&cfg.out_dir)?;
    let observed = match (&cfg.observed_summaries, &cfg.observed_series_csv) {
        (Some(s), _) => s.clone(),
        (None, Some(path)) => {
            if !path.exists() {
                return Err(Error::InvalidInput(format!(
                    "observed series does not exist: {}",
                    path.display()
                )));
            }
            ma2_summaries(&crate::read_series_csv(path)?)?
        }
        (None, None) => {
            return Err(Error::InvalidInput(
                "provide observed_summaries or observed_series_csv".into(),
            ))
        }
    };
    let abc_cfg = AbcConfig {
        epsilon: cfg.epsilon,
        n_accept: cfg.n_accept,
        max_proposals: cfg.max_proposals,
        summary_weights: None,
    };
    let out = abc_ma2_study(&observed, cfg.series_len, &abc_cfg, master_seed)?;
    eprintln!(
        "accepted {} of {} proposals (rate {:.4}{})",
        out.samples.len(),
        out.n_proposals,
        out.acceptance_rate,
        if out.exhausted { ", budget exhausted" } else { "" }
    );
    let posterior = cfg.out_dir.join("posterior.csv");
    out.samples.write_csv(&posterior)?;
    let meta = cfg.out_dir.join("meta.json");
    write_json(
        &meta,
        &AbcRunMeta {
            observed_summaries: observed,
            epsilon: cfg.epsilon,
            n_accepted: out.samples.len(),
            n_proposals: out.n_proposals,
            acceptance_rate: out.acceptance_rate,
            exhausted: out.exhausted,
            seed: master_seed,
        },
    )?;
    if out.exhausted {
        return Err(Error::BudgetExhausted {
            accepted: out.samples.len(),
            requested: cfg.n_accept,
        });
    }
    Ok(vec![posterior, meta])
}

/// Fits a belief to a posterior sample CSV and writes it as belief JSON.
pub fn fit_belief(cfg: &FitBeliefConfig) -> Result<Vec<PathBuf>> {
    if !cfg.input_csv.exists() {
        return Err(Error::InvalidInput(format!(
            "input does not exist: {}",
            cfg.input_csv.display()
        )));
    }
    let samples = SampleSet::read_csv(&cfg.input_csv)?;
    let belief = match cfg.kind.as_str() {
        "gaussian" => mba_core::belief::fit_gaussian(&samples)?,
        "kde" => mba_core::belief::fit_kde(&samples, &mba_core::belief::BandwidthRule::ScottsRule)?,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown belief kind {other:?}: expected \"gaussian\" or \"kde\""
            )))
        }
    };
    if let Some(parent) = cfg.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let wire = crate::BeliefWire::from_belief(&belief)?;
    write_json(&cfg.out, &wire)?;
    Ok(vec![cfg.out.clone()])
}
