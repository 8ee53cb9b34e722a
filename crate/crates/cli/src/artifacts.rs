//! Run-directory persistence: the on-disk layout a run produces and the
//! readers the diagnose command uses to reconstruct a run from it.
//!
//! Layout of a run directory:
//!
//! ```text
//! scenario.toml           copy of the scenario definition
//! summary.json            outcome, seeds, configuration echo
//! iterations.csv          one row per outer iteration
//! counterexamples.jsonl   one JSON object per counterexample
//! policy_<k>.json         policy held at iteration k (1-based)
//! policy_final.json       policy after the last iteration
//! diagnostics.json        bound checks and experiment results
//! plots/*.csv             flat traces for plotting
//! ```

use anyhow::{bail, Context, Result};
use cegrl::driver::{
    IterationRecord, LoopConfig, LoopReport, RecordedCounterexample, SweepResult,
    TerminationReason,
};
use cegrl::policy::PolicyParams;
use cegrl::scenario::Scenario;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const ITERATIONS_CSV_VERSION: &str = "# cegrl-iterations-v1";
pub const TRACE_CSV_VERSION: &str = "# cegrl-trace-v1";

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub certified: bool,
    pub terminated_reason: TerminationReason,
    pub iterations: usize,
    pub n_counterexamples: usize,
    pub final_min_g: Option<f64>,
    pub final_argmin: Option<Vec<f64>>,
    pub sweep_evals: Option<usize>,
    pub certificate: String,
    pub loop_config: LoopConfig,
}

impl Summary {
    pub fn from_report(scenario: &Scenario, cfg: &LoopConfig, report: &LoopReport) -> Summary {
        Summary {
            version: env!("CARGO_PKG_VERSION").to_string(),
            scenario: scenario.name.clone(),
            seed: cfg.seed,
            certified: report.certified,
            terminated_reason: report.terminated_reason,
            iterations: report.records.len(),
            n_counterexamples: report.counterexamples.len(),
            final_min_g: report.final_sweep.as_ref().map(|s| s.min_g),
            final_argmin: report.final_sweep.as_ref().map(|s| s.argmin.values().to_vec()),
            sweep_evals: report.final_sweep.as_ref().map(|s| s.n_evals),
            certificate: report.certificate.clone(),
            loop_config: cfg.clone(),
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_iterations_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut out = String::new();
    out.push_str(ITERATIONS_CSV_VERSION);
    out.push('\n');
    out.push_str("k,g_min,step_norm,J,delta_k,n_ce,accepted\n");
    for r in records {
        let delta = r.delta_k.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.index,
            fmt_f64(r.g_min_estimate),
            fmt_f64(r.step_norm),
            fmt_f64(r.j_estimate),
            delta,
            r.n_counterexamples,
            r.accepted
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_iterations_csv(path: &Path) -> Result<Vec<IterationRecord>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("k,") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("{}:{}: expected 7 fields, got {}", path.display(), lineno + 1, fields.len());
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .with_context(|| format!("{}:{}: bad {what} `{s}`", path.display(), lineno + 1))
        };
        records.push(IterationRecord {
            index: fields[0].parse().context("iteration index")?,
            g_min_estimate: parse_f(fields[1], "g_min")?,
            step_norm: parse_f(fields[2], "step_norm")?,
            j_estimate: parse_f(fields[3], "J")?,
            delta_k: if fields[4].is_empty() { None } else { Some(parse_f(fields[4], "delta_k")?) },
            n_counterexamples: fields[5].parse().context("n_ce")?,
            accepted: fields[6].parse().context("accepted flag")?,
        });
    }
    Ok(records)
}

pub fn write_counterexamples_jsonl(path: &Path, ces: &[RecordedCounterexample]) -> Result<()> {
    let mut out = String::new();
    for ce in ces {
        out.push_str(&serde_json::to_string(ce)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_counterexamples_jsonl(path: &Path) -> Result<Vec<RecordedCounterexample>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("parsing counterexample line"))
        .collect()
}

/// Writes everything a finished run leaves behind (except diagnostics, which
/// the diagnose pass appends).
pub fn write_run_dir(
    dir: &Path,
    scenario_text: &str,
    scenario: &Scenario,
    cfg: &LoopConfig,
    report: &LoopReport,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scenario.toml"), scenario_text)?;
    let summary = Summary::from_report(scenario, cfg, report);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    write_iterations_csv(&dir.join("iterations.csv"), &report.records)?;
    write_counterexamples_jsonl(&dir.join("counterexamples.jsonl"), &report.counterexamples)?;
    for (i, policy) in report.policies.iter().enumerate() {
        fs::write(dir.join(format!("policy_{}.json", i + 1)), policy.to_json())?;
    }
    fs::write(dir.join("policy_final.json"), report.final_policy.to_json())?;
    fs::write(dir.join("reward_final.json"), serde_json::to_string_pretty(&report.final_reward)?)?;
    Ok(())
}

/// Reconstructs scenario, configuration and loop report from a run
/// directory. Fails with the list of missing files when incomplete.
pub fn read_run_dir(dir: &Path) -> Result<(Scenario, String, Summary, LoopReport)> {
    let required =
        ["scenario.toml", "summary.json", "iterations.csv", "counterexamples.jsonl", "policy_final.json"];
    let missing: Vec<&str> =
        required.iter().copied().filter(|f| !dir.join(f).exists()).collect();
    if !missing.is_empty() {
        bail!("incomplete run directory {}: missing {}", dir.display(), missing.join(", "));
    }

    let scenario_text = fs::read_to_string(dir.join("scenario.toml"))?;
    let scenario = Scenario::from_toml(&scenario_text)
        .map_err(|e| anyhow::anyhow!("scenario.toml: {e}"))?;
    let summary: Summary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)
        .context("parsing summary.json")?;
    let records = read_iterations_csv(&dir.join("iterations.csv"))?;
    let counterexamples = read_counterexamples_jsonl(&dir.join("counterexamples.jsonl"))?;

    let mut policies = Vec::with_capacity(records.len());
    for k in 1..=records.len() {
        let path = dir.join(format!("policy_{k}.json"));
        if !path.exists() {
            bail!("incomplete run directory {}: missing policy_{k}.json", dir.display());
        }
        let policy = PolicyParams::from_json(&fs::read_to_string(&path)?)
            .map_err(|e| anyhow::anyhow!("policy_{k}.json: {e}"))?;
        policies.push(policy);
    }
    let final_policy = PolicyParams::from_json(&fs::read_to_string(dir.join("policy_final.json"))?)
        .map_err(|e| anyhow::anyhow!("policy_final.json: {e}"))?;
    let reward_path = dir.join("reward_final.json");
    let final_reward = if reward_path.exists() {
        serde_json::from_str(&fs::read_to_string(&reward_path)?)
            .context("parsing reward_final.json")?
    } else {
        cegrl::policy::RewardTable::task_based(&scenario)
    };

    let final_sweep = match (&summary.final_min_g, &summary.final_argmin) {
        (Some(min_g), Some(values)) => Some(SweepResult {
            min_g: *min_g,
            argmin: scenario
                .make_config(values.clone())
                .map_err(|e| anyhow::anyhow!("summary argmin config: {e}"))?,
            n_evals: summary.sweep_evals.unwrap_or(0),
        }),
        _ => None,
    };

    let report = LoopReport {
        final_policy,
        final_reward,
        records,
        terminated_reason: summary.terminated_reason,
        certified: summary.certified,
        policies,
        counterexamples,
        final_sweep,
        certificate: summary.certificate.clone(),
        seed: summary.seed,
    };
    Ok((scenario, scenario_text, summary, report))
}

/// Writes a two-column CSV trace under `plots/`.
pub fn write_trace_csv(
    dir: &Path,
    name: &str,
    header: &str,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    let mut out = String::new();
    out.push_str(TRACE_CSV_VERSION);
    out.push('\n');
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(plots.join(name), out)?;
    Ok(())
}
