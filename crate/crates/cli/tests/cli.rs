//! End-to-end checks of the `mba` binary: exit codes, stable error strings,
//! seed discipline and agreement between the exact and sampler paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mba"));
    c.env_remove("MBA_SEED");
    c
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mba_cli_{}_{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn soft_sweep_is_byte_identical_across_runs() {
    let dir = tmp_dir("sweep");
    let config = dir.join("run.json");
    write(
        &config,
        r#"{
  "spec": {"family": "beta_bernoulli", "params": {"alpha": 2.0, "beta": 2.0}},
  "beliefs": [
    {"kind": "soft_bernoulli", "p1": 0.5}, {"kind": "soft_bernoulli", "p1": 0.5},
    {"kind": "soft_bernoulli", "p1": 0.5}, {"kind": "soft_bernoulli", "p1": 0.5},
    {"kind": "soft_bernoulli", "p1": 0.5}, {"kind": "soft_bernoulli", "p1": 0.5},
    {"kind": "soft_bernoulli", "p1": 0.5}, {"kind": "soft_bernoulli", "p1": 0.5},
    {"kind": "soft_bernoulli", "p1": 0.5}, {"kind": "soft_bernoulli", "p1": 0.5}
  ],
  "soft_sweep": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
  "out_dir": "PLACEHOLDER",
  "seed": 42
}"#,
    );
    let run = |out: &Path| {
        let status = bin()
            .args(["update-global", "--exact", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let (a, b) = (dir.join("a"), dir.join("b"));
    run(&a);
    run(&b);
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 11, "one curve per sweep value");
    for name in names {
        let left = std::fs::read(a.join(&name)).unwrap();
        let right = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(left, right, "output {name} differs between identical runs");
    }
}

#[test]
fn empty_belief_list_is_input_error() {
    let dir = tmp_dir("empty");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"spec": {{"family": "beta_bernoulli", "params": {{"alpha": 2.0, "beta": 2.0}}}},
              "beliefs": [], "out_dir": "{}", "seed": 1}}"#,
            dir.join("out").display()
        ),
    );
    let out = bin()
        .args(["update-global", "--exact", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_of(&out), "error: invalid input: no belief inputs provided\n");
}

#[test]
fn missing_seed_is_input_error() {
    let dir = tmp_dir("noseed");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"spec": {{"family": "beta_bernoulli", "params": {{"alpha": 2.0, "beta": 2.0}}}},
              "beliefs": [{{"kind": "soft_bernoulli", "p1": 0.5}}], "out_dir": "{}"}}"#,
            dir.join("out").display()
        ),
    );
    let out = bin()
        .args(["update-global", "--exact", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(
        stderr_of(&out),
        "error: invalid input: no master seed: pass --seed, set \"seed\" in the config, or export MBA_SEED\n"
    );
}

#[test]
fn env_seed_fallback_is_honored() {
    let dir = tmp_dir("envseed");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"spec": {{"family": "beta_bernoulli", "params": {{"alpha": 2.0, "beta": 2.0}}}},
              "beliefs": [{{"kind": "soft_bernoulli", "p1": 0.8}}], "out_dir": "{}"}}"#,
            dir.join("out").display()
        ),
    );
    let status = bin()
        .env("MBA_SEED", "7")
        .args(["update-global", "--exact", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.join("out").join("global_pmf.csv").exists());
}

#[test]
fn local_update_study_out_of_range() {
    let dir = tmp_dir("range");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"spec": {{"family": "beta_bernoulli", "params": {{"alpha": 2.0, "beta": 2.0}}}},
              "beliefs": [{{"kind": "soft_bernoulli", "p1": 0.5}}, {{"kind": "soft_bernoulli", "p1": 0.9}}],
              "out_dir": "{}", "seed": 3}}"#,
            dir.join("out").display()
        ),
    );
    let out = bin()
        .args(["update-local", "--exact", "--study", "99", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_of(&out), "error: index out of range: 99 (have 2)\n");

    // A valid study emits the binary-support pmf.
    let status = bin()
        .args(["update-local", "--exact", "--study", "1", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    let pmf = std::fs::read_to_string(dir.join("out").join("local_pmf_study_1.csv")).unwrap();
    assert_eq!(pmf.lines().count(), 3);
    assert!(pmf.starts_with("theta_0,density\n"));
}

#[test]
fn abc_exhausted_budget_exits_with_code_3() {
    let dir = tmp_dir("budget");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"observed_summaries": [0.1, 0.05], "epsilon": 1e-300, "n_accept": 10,
              "max_proposals": 500, "out_dir": "{}", "seed": 5}}"#,
            dir.join("out").display()
        ),
    );
    let out = bin().args(["abc-run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).starts_with("error: budget exhausted: accepted 0 of 10"));
}

#[test]
fn exact_and_sampler_paths_agree_on_1d_problems() {
    use mba_core::stats::ks_distance;
    use mba_core::updater::PhiGrid;

    let dir = tmp_dir("agree");
    let config = dir.join("run.json");
    let beliefs = r#"[
      {"kind": "gaussian", "mean": [0.4], "cov": [[0.2]]},
      {"kind": "gaussian", "mean": [0.6], "cov": [[0.3]]},
      {"kind": "gaussian", "mean": [0.3], "cov": [[0.25]]},
      {"kind": "gaussian", "mean": [0.9], "cov": [[0.4]]},
      {"kind": "gaussian", "mean": [0.5], "cov": [[0.2]]}
    ]"#;
    write(
        &config,
        &format!(
            r#"{{"spec": {{"family": "gaussian_niw",
               "params": {{"m": [0.0], "v": [[1.0]], "nu": 3.0, "psi": [[1.0]]}}}},
              "beliefs": {beliefs},
              "grid": {{"kind": "gaussian_1d", "mu_range": [-2.0, 2.5], "n_mu": 200,
                        "var_range": [0.001, 6.0], "n_var": 200}},
              "sampler": {{"thin": 5}},
              "out_dir": "{}", "seed": 11}}"#,
            dir.join("exact").display()
        ),
    );
    let status = bin()
        .args(["update-global", "--exact", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .args(["update-global", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.join("sampled"))
        .status()
        .unwrap();
    assert!(status.success());

    // Reconstruct the grid marginal of mu from the exact CSV.
    let text = std::fs::read_to_string(dir.join("exact").join("global_pmf.csv")).unwrap();
    let grid = PhiGrid::gaussian_mu_var((-2.0, 2.5), 200, (0.001, 6.0), 200).unwrap();
    let mut masses: Vec<(f64, f64)> = Vec::new();
    for (i, line) in text.lines().skip(1).enumerate() {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        masses.push((fields[0], fields[2] * grid.weights()[i]));
    }
    masses.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let cdf = move |x: f64| {
        masses.iter().take_while(|(v, _)| *v <= x).map(|(_, m)| m).sum::<f64>()
    };

    // Pull the resampled mu draws from the sampler CSV.
    let text = std::fs::read_to_string(dir.join("sampled").join("draws_resampled.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let mu_col = header.iter().position(|h| *h == "mu_0").unwrap();
    let mus: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(mu_col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mus.len(), 8000);
    let d = ks_distance(&mus, cdf);
    assert!(d < 0.05, "exact vs sampler KS distance {d}");
}

#[test]
fn fit_belief_emits_wire_json() {
    let dir = tmp_dir("fit");
    let csv = dir.join("samples.csv");
    write(&csv, "theta_0,theta_1\n0.1,0.2\n0.4,0.1\n0.2,0.5\n0.9,0.3\n0.5,0.25\n");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"input_csv": "{}", "kind": "gaussian", "out": "{}"}}"#,
            csv.display(),
            dir.join("belief.json").display()
        ),
    );
    let status = bin().args(["fit-belief", "--config"]).arg(&config).status().unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(dir.join("belief.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["kind"], "gaussian");
    assert_eq!(v["mean"].as_array().unwrap().len(), 2);
}

#[test]
fn concentration_outputs_prior_row_and_summary() {
    let dir = tmp_dir("conc");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"j_sweep": [1, 2, 5], "n_seeds": 2, "out_dir": "{}", "seed": 9}}"#,
            dir.join("out").display()
        ),
    );
    let status = bin().args(["concentration", "--config"]).arg(&config).status().unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(dir.join("out").join("concentration.csv")).unwrap();
    let first = csv.lines().nth(1).unwrap();
    assert_eq!(first, "0,0,0.2", "the J = 0 row carries the prior mass");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("out").join("concentration_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["kl_optimal_atom"], 0.7);
}

#[test]
fn ma2_experiment_is_reproducible_per_seed() {
    let dir = tmp_dir("ma2det");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"n_studies": 3, "series_len": 10, "epsilon": 0.4, "n_accept": 60,
              "max_proposals": 200000, "bootstrap_replicates": 20, "css_grid": 40,
              "css_grid_bootstrap": 30,
              "sampler": {{"n_warmup": 200, "n_keep": 200, "n_chains": 2}},
              "out_dir": "{}", "seed": 33}}"#,
            dir.join("a").display()
        ),
    );
    let run = |out: &Path| {
        let status = bin()
            .args(["ma2-experiment", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    };
    run(&dir.join("a"));
    run(&dir.join("b"));
    for name in ["metrics.json", "study_1_posterior.csv", "mba_resampled.csv", "estimates.json"] {
        let left = std::fs::read(dir.join("a").join(name)).unwrap();
        let right = std::fs::read(dir.join("b").join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }
}

#[test]
fn update_local_sampler_writes_study_draws() {
    let dir = tmp_dir("local");
    let config = dir.join("run.json");
    write(
        &config,
        &format!(
            r#"{{"spec": {{"family": "gaussian_niw",
               "params": {{"m": [0.0], "v": [[1.0]], "nu": 3.0, "psi": [[1.0]]}}}},
              "beliefs": [
                {{"kind": "gaussian", "mean": [0.4], "cov": [[0.2]]}},
                {{"kind": "gaussian", "mean": [0.7], "cov": [[0.3]]}}
              ],
              "sampler": {{"n_warmup": 300, "n_keep": 300, "n_chains": 2}},
              "out_dir": "{}", "seed": 21}}"#,
            dir.join("out").display()
        ),
    );
    let status = bin()
        .args(["update-local", "--study", "1", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());
    let samples =
        mba_core::belief::SampleSet::read_csv(dir.join("out").join("local_draws_study_1.csv"))
            .unwrap();
    assert_eq!(samples.len(), 600);
    assert_eq!(samples.dim(), 1);
}
