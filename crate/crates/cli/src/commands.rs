//! Command implementations. Each returns the process exit code:
//! 0 success/certified, 1 error (raised as `Err`), 2 budget exhausted
//! without certification, 3 counterexamples found.

use crate::artifacts::{self, Summary};
use anyhow::{anyhow, bail, Context, Result};
use cegrl::diagnostics::{
    check_lipschitz_bound, delta_k_analysis, model_mismatch_experiment, oracle_j_star_robust,
    rademacher_report, DeltaKAnalysis, LipschitzReport, RademacherReport,
};
use cegrl::driver::{run_loop, verify_sweep, LoopConfig, LoopReport};
use cegrl::falsifier::falsify;
use cegrl::policy::{soft_value_iteration, PolicyParams, RewardTable};
use cegrl::robustness::SafetySpec;
use cegrl::rng;
use cegrl::scenario::Scenario;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNCERTIFIED: i32 = 2;
pub const EXIT_COUNTEREXAMPLES: i32 = 3;

/// Slip perturbations evaluated by the mismatch experiment.
pub const MISMATCH_EPSILONS: [f64; 3] = [0.01, 0.02, 0.05];

/// Resolved inputs of a `run` invocation.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub scenario_file: PathBuf,
    pub output_dir: PathBuf,
    pub loop_config: LoopConfig,
    /// Planner temperature for the synthesized initial policy.
    pub init_lambda: f64,
    /// Optional pre-trained initial policy snapshot.
    pub initial_policy: Option<PathBuf>,
    pub force: bool,
}

fn load_scenario(path: &Path) -> Result<(Scenario, String)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario file {}", path.display()))?;
    let scenario = Scenario::from_toml(&text).map_err(|e| anyhow!("{e}"))?;
    Ok((scenario, text))
}

fn load_policy(path: &Path, scenario: &Scenario) -> Result<PolicyParams> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading policy snapshot {}", path.display()))?;
    let policy = PolicyParams::from_json(&text).map_err(|e| anyhow!("{e}"))?;
    if policy.num_states() != scenario.num_states() {
        bail!(
            "policy snapshot has {} states but scenario `{}` has {}",
            policy.num_states(),
            scenario.name,
            scenario.num_states()
        );
    }
    Ok(policy)
}

/// Task-optimized starting policy: plan on the raw task reward at the given
/// temperature under the nominal configuration.
pub fn synthesize_initial_policy(scenario: &Scenario, init_lambda: f64) -> Result<PolicyParams> {
    let reward = RewardTable::task_based(scenario);
    let plan = soft_value_iteration(
        scenario,
        &scenario.nominal_config(),
        &reward,
        init_lambda,
        1e-9,
        scenario.horizon,
    )
    .map_err(|e| anyhow!("{e}"))?;
    Ok(plan.policy)
}

pub fn cmd_run(manifest: &RunManifest) -> Result<i32> {
    let (scenario, scenario_text) = load_scenario(&manifest.scenario_file)?;
    let spec = SafetySpec::from_scenario(&scenario);

    let summary_path = manifest.output_dir.join("summary.json");
    if summary_path.exists() && !manifest.force {
        bail!(
            "{} already contains a run (pass --force to overwrite)",
            manifest.output_dir.display()
        );
    }

    let initial = match &manifest.initial_policy {
        Some(path) => load_policy(path, &scenario)?,
        None => synthesize_initial_policy(&scenario, manifest.init_lambda)?,
    };

    log::info!("running loop on `{}` (seed {})", scenario.name, manifest.loop_config.seed);
    let report =
        run_loop(&scenario, &spec, &initial, &manifest.loop_config).map_err(|e| anyhow!("{e}"))?;

    artifacts::write_run_dir(
        &manifest.output_dir,
        &scenario_text,
        &scenario,
        &manifest.loop_config,
        &report,
    )?;
    // Diagnostics are part of a complete run; diagnose can recompute them
    // later from the artifacts alone.
    let diagnostics = compute_diagnostics(&scenario, &manifest.loop_config, &report)?;
    write_diagnostics(&manifest.output_dir, &diagnostics, &report)?;

    println!(
        "{}: {} after {} iterations (final sweep min g = {})",
        scenario.name,
        if report.certified { "certified" } else { "not certified" },
        report.records.len(),
        report.final_sweep.as_ref().map(|s| s.min_g.to_string()).unwrap_or_default(),
    );
    Ok(if report.certified { EXIT_OK } else { EXIT_UNCERTIFIED })
}

#[derive(Debug, Serialize)]
struct FalsificationArtifact {
    scenario: String,
    seed: u64,
    best_g: f64,
    best_config: Vec<f64>,
    n_evaluations: usize,
    counterexamples: Vec<serde_json::Value>,
    history: Vec<(Vec<f64>, f64)>,
}

pub fn cmd_falsify(
    scenario_file: &Path,
    policy_file: &Path,
    out_dir: &Path,
    cfg: &cegrl::falsifier::FalsifierConfig,
) -> Result<i32> {
    let (scenario, _) = load_scenario(scenario_file)?;
    let spec = SafetySpec::from_scenario(&scenario);
    let policy = load_policy(policy_file, &scenario)?;
    let report = falsify(&scenario, &spec, &policy, cfg).map_err(|e| anyhow!("{e}"))?;

    fs::create_dir_all(out_dir)?;
    let artifact = FalsificationArtifact {
        scenario: scenario.name.clone(),
        seed: cfg.seed,
        best_g: report.best_g,
        best_config: report.best_config.values().to_vec(),
        n_evaluations: report.history.len(),
        counterexamples: report
            .counterexamples
            .iter()
            .map(|ce| serde_json::to_value(ce).expect("counterexample serialization"))
            .collect(),
        history: report
            .history
            .iter()
            .map(|(c, g)| (c.values().to_vec(), *g))
            .collect(),
    };
    fs::write(
        out_dir.join("falsification.json"),
        serde_json::to_string_pretty(&artifact)?,
    )?;

    println!(
        "{}: {} counterexamples in {} evaluations, best g = {}",
        scenario.name,
        report.counterexamples.len(),
        report.history.len(),
        report.best_g
    );
    Ok(if report.counterexamples.is_empty() { EXIT_OK } else { EXIT_COUNTEREXAMPLES })
}

pub fn cmd_verify(
    scenario_file: &Path,
    policy_file: &Path,
    n_samples: usize,
    rollouts_per_eval: usize,
    seed: u64,
) -> Result<i32> {
    let (scenario, _) = load_scenario(scenario_file)?;
    let spec = SafetySpec::from_scenario(&scenario);
    let policy = load_policy(policy_file, &scenario)?;
    let sweep = verify_sweep(&scenario, &spec, &policy, n_samples, &[], rollouts_per_eval, seed)
        .map_err(|e| anyhow!("{e}"))?;
    println!(
        "{}: sweep min g = {} at {:?} over {} evaluations",
        scenario.name,
        sweep.min_g,
        sweep.argmin.values(),
        sweep.n_evals
    );
    Ok(if sweep.min_g >= 0.0 { EXIT_OK } else { EXIT_COUNTEREXAMPLES })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RegretSection {
    pub j_star: f64,
    /// "oracle" when the exact enumeration ran, "best-observed" when the
    /// scenario is too large and the best recorded return stands in.
    pub source: String,
    pub final_regret: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Diagnostics {
    pub lipschitz: Option<LipschitzReport>,
    pub delta_k: Option<DeltaKAnalysis>,
    pub rademacher: RademacherReport,
    pub regret: RegretSection,
    pub model_mismatch: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// The configuration set the certification sweep evaluates: a Sobol design
/// of `verify_samples` points plus every recorded counterexample
/// configuration.
pub fn certification_configs(
    scenario: &Scenario,
    cfg: &LoopConfig,
    report: &LoopReport,
) -> Result<Vec<cegrl::scenario::EnvConfig>> {
    let sobol = cegrl::sobol::SobolSequence::new(scenario.config_dim()).map_err(|e| anyhow!("{e}"))?;
    let mut configs = Vec::with_capacity(cfg.verify_samples + report.counterexamples.len());
    for i in 0..cfg.verify_samples {
        configs.push(scenario.config_from_unit(&sobol.point(i)).map_err(|e| anyhow!("{e}"))?);
    }
    configs.extend(report.counterexamples.iter().map(|r| r.ce.config.clone()));
    Ok(configs)
}

pub fn compute_diagnostics(
    scenario: &Scenario,
    cfg: &LoopConfig,
    report: &LoopReport,
) -> Result<Diagnostics> {
    let spec = SafetySpec::from_scenario(scenario);
    let mut warnings = Vec::new();

    // The falsifier's evaluation schedule, replayed from the configuration.
    let falsifier_cfg = cfg.falsifier_schedule();
    let eval_seed = falsifier_cfg.eval_base_seed();
    let m = falsifier_cfg.rollouts_per_eval;

    let lipschitz = match check_lipschitz_bound(
        scenario,
        &spec,
        report,
        64,
        rng::mix_seed(cfg.seed, 20),
        m,
        eval_seed,
    ) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("lipschitz: {e}"));
            None
        }
    };

    let delta_k = match delta_k_analysis(&report.records) {
        Ok(a) => Some(a),
        Err(e) => {
            warnings.push(format!("delta-k: {e}"));
            None
        }
    };

    let rademacher = rademacher_report(
        scenario,
        report,
        64,
        32,
        2000,
        0.05,
        rng::mix_seed(cfg.seed, 21),
    )
    .map_err(|e| anyhow!("{e}"))?;

    // Reference return for the regret trace: exact enumeration over
    // deterministic policies that are safe across the certification sweep,
    // when feasible; otherwise the best observed return stands in.
    let sweep_configs = certification_configs(scenario, cfg, report)?;
    let (j_star, source) = match oracle_j_star_robust(
        scenario,
        &spec,
        &sweep_configs,
        &scenario.nominal_config(),
        m,
        eval_seed,
    ) {
        Ok(j) => (j, "oracle".to_string()),
        Err(cegrl::Error::EnumerationTooLarge { .. }) => {
            let best =
                report.records.iter().map(|r| r.j_estimate).fold(f64::NEG_INFINITY, f64::max);
            warnings.push("regret: enumeration too large, using best observed return".into());
            (best, "best-observed".to_string())
        }
        Err(e) => bail!("{e}"),
    };
    let final_regret =
        j_star - report.records.last().map(|r| r.j_estimate).unwrap_or(f64::NAN);

    let model_mismatch = model_mismatch_experiment(
        scenario,
        &report.final_policy,
        &MISMATCH_EPSILONS,
        2000,
        rng::mix_seed(cfg.seed, 22),
    )
    .map_err(|e| anyhow!("{e}"))?;

    Ok(Diagnostics {
        lipschitz,
        delta_k,
        rademacher,
        regret: RegretSection { j_star, source, final_regret },
        model_mismatch,
        warnings,
    })
}

pub fn write_diagnostics(dir: &Path, diag: &Diagnostics, report: &LoopReport) -> Result<()> {
    fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(diag)?)?;

    artifacts::write_trace_csv(
        dir,
        "g_min.csv",
        "k,g_min",
        report
            .records
            .iter()
            .map(|r| vec![r.index.to_string(), format!("{}", r.g_min_estimate)]),
    )?;
    artifacts::write_trace_csv(
        dir,
        "delta_k.csv",
        "k,delta_k",
        report.records.iter().filter_map(|r| {
            r.delta_k.map(|d| vec![r.index.to_string(), format!("{d}")])
        }),
    )?;
    artifacts::write_trace_csv(
        dir,
        "regret.csv",
        "k,J,j_star,regret",
        report.records.iter().map(|r| {
            vec![
                r.index.to_string(),
                format!("{}", r.j_estimate),
                format!("{}", diag.regret.j_star),
                format!("{}", diag.regret.j_star - r.j_estimate),
            ]
        }),
    )?;
    artifacts::write_trace_csv(
        dir,
        "model_mismatch.csv",
        "epsilon,delta_j",
        diag.model_mismatch
            .iter()
            .map(|(e, dj)| vec![format!("{e}"), format!("{dj}")]),
    )?;
    Ok(())
}

pub fn cmd_diagnose(run_dir: &Path) -> Result<i32> {
    let (scenario, _, summary, report) = artifacts::read_run_dir(run_dir)?;
    let diagnostics = compute_diagnostics(&scenario, &summary.loop_config, &report)?;
    write_diagnostics(run_dir, &diagnostics, &report)?;
    for w in &diagnostics.warnings {
        log::warn!("{w}");
        eprintln!("warning: {w}");
    }
    println!(
        "diagnostics written to {} ({} warnings)",
        run_dir.join("diagnostics.json").display(),
        diagnostics.warnings.len()
    );
    Ok(EXIT_OK)
}

/// Re-reads what `cmd_run` wrote; used by tests and by `diagnose`.
pub fn read_summary(dir: &Path) -> Result<Summary> {
    let text = fs::read_to_string(dir.join("summary.json"))?;
    Ok(serde_json::from_str(&text)?)
}
