//! The outer refinement loop: alternate falsification and refinement until a
//! verification sweep certifies non-negative robustness everywhere it looks.
//!
//! Certification is a *sampling* certificate: a dense Sobol sweep over the
//! configuration box plus every configuration any counterexample was found
//! at. When the monotone gate is enabled, a refinement proposal is accepted
//! only if re-falsifying it (first with a quarter-budget probe, then with the
//! full budget) does not regress the best-found robustness; the full-budget
//! check is reused as the next iteration's falsification, so accepted
//! records are monotone by construction. Rejected proposals halve the step
//! cap for the next attempt.

use crate::error::Result;
use crate::falsifier::{falsify, Counterexample, FalsifierConfig};
use crate::policy::{PolicyParams, RewardTable};
use crate::refiner::{refine, RefinerConfig};
use crate::robustness::{policy_robustness, policy_robustness_witness, SafetySpec};
use crate::rng;
use crate::scenario::{EnvConfig, Scenario};
use crate::sim::expected_return;
use crate::sobol::SobolSequence;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_outer_iters: usize,
    pub falsifier: FalsifierConfig,
    pub refiner: RefinerConfig,
    /// Sobol sweep size for the certification check.
    pub verify_samples: usize,
    pub monotone_gate: bool,
    pub gate_tol: f64,
    /// Rollouts per expected-return estimate.
    pub j_rollouts: usize,
    /// Bound on how many prior counterexamples are replayed into each
    /// refinement alongside the fresh ones.
    pub replay_size: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_outer_iters: 20,
            falsifier: FalsifierConfig::default(),
            refiner: RefinerConfig::default(),
            verify_samples: 10_000,
            monotone_gate: false,
            gate_tol: 0.0,
            j_rollouts: 2000,
            replay_size: 5,
            seed: 0,
        }
    }
}

// Derived stream tags.
const STREAM_FALSIFIER: u64 = 1;
const STREAM_PROBE: u64 = 2;
const STREAM_J: u64 = 3;
const STREAM_REFINER: u64 = 4;

impl LoopConfig {
    /// Falsifier configuration with the per-run derived seed; the same
    /// schedule is replayed by diagnostics and by anything re-checking
    /// recorded robustness values.
    pub fn falsifier_schedule(&self) -> FalsifierConfig {
        let mut cfg = self.falsifier.clone();
        cfg.seed = rng::mix_seed(self.seed, STREAM_FALSIFIER);
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Certified,
    Budget,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    /// Minimum robustness over this iteration's falsification history.
    pub g_min_estimate: f64,
    /// Parameter step of this iteration's refinement proposal (0 when no
    /// refinement ran).
    pub step_norm: f64,
    /// Expected return of the held policy under the nominal configuration.
    pub j_estimate: f64,
    /// `J_{k+1} - J_k`, filled retrospectively; `None` on the last record.
    pub delta_k: Option<f64>,
    pub n_counterexamples: usize,
    /// False only when the monotone gate rejected this iteration's proposal.
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub min_g: f64,
    pub argmin: EnvConfig,
    pub n_evals: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedCounterexample {
    pub outer_iteration: usize,
    #[serde(flatten)]
    pub ce: Counterexample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopReport {
    pub final_policy: PolicyParams,
    /// Reward table (task plus accumulated penalties) after the last
    /// refinement.
    pub final_reward: RewardTable,
    pub records: Vec<IterationRecord>,
    pub terminated_reason: TerminationReason,
    pub certified: bool,
    /// Policy held at the start of each iteration (same indexing as
    /// `records`).
    pub policies: Vec<PolicyParams>,
    pub counterexamples: Vec<RecordedCounterexample>,
    pub final_sweep: Option<SweepResult>,
    /// The kind of certificate a certified run carries.
    pub certificate: String,
    pub seed: u64,
}

/// Evaluates the robustness objective on a Sobol sweep of `n_samples`
/// configurations plus the given extra configurations (prior
/// counterexamples), returning the exact minimum over that set.
pub fn verify_sweep(
    scenario: &Scenario,
    spec: &SafetySpec,
    policy: &PolicyParams,
    n_samples: usize,
    extra_configs: &[EnvConfig],
    rollouts_per_eval: usize,
    eval_base_seed: u64,
) -> Result<SweepResult> {
    assert!(n_samples >= 1, "sweep needs at least one sample");
    let sobol = SobolSequence::new(scenario.config_dim())?;
    let mut best: Option<(f64, EnvConfig)> = None;
    let mut consider = |config: EnvConfig| -> Result<()> {
        let g = policy_robustness(scenario, spec, &config, policy, rollouts_per_eval, eval_base_seed)?
            .value;
        let better = match &best {
            None => true,
            Some((bg, _)) => g < *bg,
        };
        if better {
            best = Some((g, config));
        }
        Ok(())
    };
    for i in 0..n_samples {
        consider(scenario.config_from_unit(&sobol.point(i))?)?;
    }
    for config in extra_configs {
        consider(config.clone())?;
    }
    let (min_g, argmin) = best.expect("at least one evaluation");
    Ok(SweepResult { min_g, argmin, n_evals: n_samples + extra_configs.len() })
}

/// Runs the falsify-refine loop until certification or iteration budget.
pub fn run_loop(
    scenario: &Scenario,
    spec: &SafetySpec,
    initial_policy: &PolicyParams,
    cfg: &LoopConfig,
) -> Result<LoopReport> {
    let falsifier_cfg = cfg.falsifier_schedule();
    let mut probe_cfg = falsifier_cfg.clone();
    probe_cfg.seed = rng::mix_seed(cfg.seed, STREAM_PROBE);
    probe_cfg.budget = (falsifier_cfg.budget / 4).max(falsifier_cfg.init_samples).max(2);
    probe_cfg.init_samples = falsifier_cfg.init_samples.min(probe_cfg.budget);
    let j_seed = rng::mix_seed(cfg.seed, STREAM_J);
    let nominal = scenario.nominal_config();

    let mut refiner_cfg = cfg.refiner.clone();
    refiner_cfg.seed = rng::mix_seed(cfg.seed, STREAM_REFINER);

    let mut policy = initial_policy.normalized();
    let mut reward = RewardTable::task_based(scenario);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut policies: Vec<PolicyParams> = Vec::new();
    let mut all_ces: Vec<RecordedCounterexample> = Vec::new();
    let mut pending_report = None;
    let mut certified = false;
    let mut final_sweep: Option<SweepResult> = None;

    for k in 1..=cfg.max_outer_iters {
        let report = match pending_report.take() {
            Some(r) => r,
            None => falsify(scenario, spec, &policy, &falsifier_cfg)?,
        };
        let g_min = report.best_g;
        let j = expected_return(scenario, &nominal, &policy, cfg.j_rollouts, j_seed)?;
        policies.push(policy.clone());

        let mut iteration_ces = report.counterexamples;
        let mut n_ce = iteration_ces.len();

        if iteration_ces.is_empty() {
            let prior_configs: Vec<EnvConfig> =
                all_ces.iter().map(|r| r.ce.config.clone()).collect();
            let sweep = verify_sweep(
                scenario,
                spec,
                &policy,
                cfg.verify_samples,
                &prior_configs,
                falsifier_cfg.rollouts_per_eval,
                falsifier_cfg.eval_base_seed(),
            )?;
            log::info!("iteration {k}: no counterexample; sweep min g = {:.6}", sweep.min_g);
            if sweep.min_g >= 0.0 {
                records.push(IterationRecord {
                    index: k,
                    g_min_estimate: g_min,
                    step_norm: 0.0,
                    j_estimate: j,
                    delta_k: None,
                    n_counterexamples: 0,
                    accepted: true,
                });
                final_sweep = Some(sweep);
                certified = true;
                break;
            }
            // The sweep found a violation the falsifier missed: feed its
            // worst point back as a counterexample surrogate.
            let (value, witness) = policy_robustness_witness(
                scenario,
                spec,
                &sweep.argmin,
                &policy,
                falsifier_cfg.rollouts_per_eval,
                falsifier_cfg.eval_base_seed(),
            )?;
            debug_assert!(value.violating());
            iteration_ces = vec![Counterexample {
                config: sweep.argmin.clone(),
                trajectory: witness,
                g_value: value.value,
                iteration_found: 0,
            }];
            n_ce = 1;
        }

        // Refinement input: fresh counterexamples plus a bounded replay of
        // prior ones.
        let replay_start = all_ces.len().saturating_sub(cfg.replay_size);
        let mut refine_set: Vec<Counterexample> =
            all_ces[replay_start..].iter().map(|r| r.ce.clone()).collect();
        refine_set.extend(iteration_ces.iter().cloned());
        all_ces.extend(iteration_ces.into_iter().map(|ce| RecordedCounterexample {
            outer_iteration: k,
            ce,
        }));

        let result = refine(&policy, &reward, &refine_set, scenario, &refiner_cfg)?;
        reward = result.reward.clone();

        let mut accepted = true;
        if cfg.monotone_gate {
            let probe = falsify(scenario, spec, &result.new_policy, &probe_cfg)?;
            if probe.best_g < g_min - cfg.gate_tol {
                accepted = false;
            } else {
                // Authoritative check at full budget; on success the report
                // carries over as the next iteration's falsification.
                let full = falsify(scenario, spec, &result.new_policy, &falsifier_cfg)?;
                if full.best_g < g_min - cfg.gate_tol {
                    accepted = false;
                } else {
                    pending_report = Some(full);
                }
            }
        }

        if accepted {
            policy = result.new_policy;
        } else if result.step_norm.is_finite() && result.step_norm > 0.0 {
            // Shrink the cap toward the rejected proposal and retry from the
            // current iterate.
            refiner_cfg.step_cap = refiner_cfg.step_cap.min(result.step_norm) / 2.0;
            log::info!(
                "iteration {k}: proposal rejected by monotone gate; step cap now {:.3}",
                refiner_cfg.step_cap
            );
        }

        records.push(IterationRecord {
            index: k,
            g_min_estimate: g_min,
            step_norm: result.step_norm,
            j_estimate: j,
            delta_k: None,
            n_counterexamples: n_ce,
            accepted,
        });
    }

    for i in 0..records.len().saturating_sub(1) {
        records[i].delta_k = Some(records[i + 1].j_estimate - records[i].j_estimate);
    }

    if final_sweep.is_none() {
        // Budget ran out: still sweep the final policy so the report carries
        // an honest worst-case estimate (this does not certify).
        let prior_configs: Vec<EnvConfig> = all_ces.iter().map(|r| r.ce.config.clone()).collect();
        final_sweep = Some(verify_sweep(
            scenario,
            spec,
            &policy,
            cfg.verify_samples,
            &prior_configs,
            falsifier_cfg.rollouts_per_eval,
            falsifier_cfg.eval_base_seed(),
        )?);
    }

    Ok(LoopReport {
        final_policy: policy,
        final_reward: reward,
        records,
        terminated_reason: if certified {
            TerminationReason::Certified
        } else {
            TerminationReason::Budget
        },
        certified,
        policies,
        counterexamples: all_ces,
        final_sweep,
        certificate: "sampling".to_string(),
        seed: cfg.seed,
    })
}

/// Per-iteration regret `J* - J_k` against a reference optimal return.
pub fn regret_trace(records: &[IterationRecord], j_star: f64) -> Vec<f64> {
    records.iter().map(|r| j_star - r.j_estimate).collect()
}
