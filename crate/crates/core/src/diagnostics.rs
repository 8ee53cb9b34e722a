//! Empirical checks on the refinement run: a Lipschitz-based robustness
//! bound, an empirical Rademacher estimate with the matching generalization
//! bound, the improvement-trace analysis, a dynamics-mismatch experiment, and
//! an exact enumeration oracle for the optimal safe return.

use crate::driver::{IterationRecord, LoopReport};
use crate::error::{Error, Result};
use crate::grid::{Action, NUM_ACTIONS};
use crate::policy::PolicyParams;
use crate::robustness::{policy_robustness, SafetySpec};
use crate::rng;
use crate::scenario::{EnvConfig, Scenario};
use crate::sim::{executed_action_probs, apply_move, expected_return};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

/// Largest deterministic-policy enumeration the oracle will attempt.
pub const MAX_ENUMERATION: f64 = 1e7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Empirical Lipschitz estimate: max observed |dg| / |dtheta| at the
    /// reference configuration.
    pub l_hat: f64,
    /// Largest recorded parameter step.
    pub c_irl: f64,
    /// Number of policy iterates in the accepted chain.
    pub n: usize,
    pub g1: f64,
    pub g_final: f64,
    pub bound: f64,
    pub holds: bool,
}

/// The bound itself: `g1 - l_hat * c_irl * (n - 1)`.
pub fn lipschitz_lower_bound(g1: f64, l_hat: f64, c_irl: f64, n: usize) -> f64 {
    g1 - l_hat * c_irl * (n.saturating_sub(1)) as f64
}

/// Estimates the parameter-Lipschitz constant of the robustness objective at
/// the run's worst configuration and checks the telescoped lower bound on the
/// final policy. Ratios are taken over consecutive recorded iterates and over
/// `probe_pairs` random perturbations of them with `||u|| <= c_irl`.
pub fn check_lipschitz_bound(
    scenario: &Scenario,
    spec: &SafetySpec,
    report: &LoopReport,
    probe_pairs: usize,
    seed: u64,
    rollouts_per_eval: usize,
    eval_base_seed: u64,
) -> Result<LipschitzReport> {
    let accepted = report.records.iter().filter(|r| r.accepted).count();
    if accepted < 2 {
        return Err(Error::InsufficientIterations { required: 2, got: accepted });
    }
    let reference = report
        .final_sweep
        .as_ref()
        .map(|s| s.argmin.clone())
        .unwrap_or_else(|| scenario.nominal_config());

    let g_at = |policy: &PolicyParams| -> Result<f64> {
        Ok(policy_robustness(scenario, spec, &reference, policy, rollouts_per_eval, eval_base_seed)?
            .value)
    };

    let mut chain: Vec<&PolicyParams> = report.policies.iter().collect();
    chain.push(&report.final_policy);
    let g_values: Vec<f64> = chain.iter().map(|p| g_at(p)).collect::<Result<_>>()?;

    let c_irl = report.records.iter().map(|r| r.step_norm).fold(0.0, f64::max);
    let mut l_hat = 0.0f64;
    for (pair, gs) in chain.windows(2).zip(g_values.windows(2)) {
        let dist = pair[0].l2_distance(pair[1]);
        if dist > 1e-12 {
            l_hat = l_hat.max((gs[0] - gs[1]).abs() / dist);
        }
    }

    // Random perturbation probes around the recorded iterates.
    if c_irl > 0.0 {
        let mut probe_rng = rng::stream(seed);
        let dim = report.final_policy.logits().len();
        for i in 0..probe_pairs {
            let base = chain[i % chain.len()];
            let mut direction: Vec<f64> = (0..dim)
                .map(|_| rng::range_f64(&mut probe_rng, -1.0, 1.0))
                .collect();
            let norm: f64 = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let magnitude = c_irl * rng::unit_f64(&mut probe_rng).max(1e-3);
            for d in &mut direction {
                *d *= magnitude / norm;
            }
            let mut perturbed = base.clone();
            let logits: Vec<f64> =
                base.logits().iter().zip(&direction).map(|(l, d)| l + d).collect();
            for s in 0..perturbed.num_states() {
                for a in 0..NUM_ACTIONS {
                    perturbed.set_logit(s, a, logits[s * NUM_ACTIONS + a]);
                }
            }
            let g_base = g_values[i % chain.len()];
            let g_pert = g_at(&perturbed)?;
            l_hat = l_hat.max((g_base - g_pert).abs() / magnitude);
        }
    }

    let n = accepted + 1; // iterates in the accepted chain, counting theta_1
    let g1 = g_values[0];
    let g_final = *g_values.last().expect("non-empty chain");
    let bound = lipschitz_lower_bound(g1, l_hat, c_irl, n);
    Ok(LipschitzReport {
        l_hat,
        c_irl,
        n,
        g1,
        g_final,
        bound,
        holds: g_final >= bound - 1e-9,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RademacherReport {
    /// Environment-sample count N.
    pub n_samples: usize,
    /// Refinement iterations K.
    pub k_iters: usize,
    pub rad_hat: f64,
    pub delta: f64,
    /// `2 K rad_hat + sqrt(8 K log(1/delta) / N)`.
    pub bound: f64,
    /// Measured train/holdout gap of the final policy's mean return.
    pub epsilon_hat: f64,
}

/// Monte-Carlo estimate of the empirical Rademacher average of a return
/// matrix (rows: candidate policies, columns: samples):
/// `E_sigma[ max_rows (1/N) sum_i sigma_i J[row][i] ]`.
pub fn estimate_rademacher(j_values: &[Vec<f64>], n_sigma_draws: usize, seed: u64) -> f64 {
    assert!(n_sigma_draws >= 1, "need at least one sigma draw");
    assert!(!j_values.is_empty() && !j_values[0].is_empty(), "matrix must be non-empty");
    let n = j_values[0].len();
    let mut rng = rng::stream(seed);
    let mut total = 0.0;
    for _ in 0..n_sigma_draws {
        let signs: Vec<f64> =
            (0..n).map(|_| if rng.next_u64() & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let sup = j_values
            .iter()
            .map(|row| {
                row.iter().zip(&signs).map(|(j, s)| j * s).sum::<f64>() / n as f64
            })
            .fold(f64::NEG_INFINITY, f64::max);
        total += sup;
    }
    total / n_sigma_draws as f64
}

/// Builds the Rademacher report for a finished run: rows are the recorded
/// candidate policies, columns are per-environment returns on a Sobol-drawn
/// train set; the holdout set measures the final policy's generalization gap.
#[allow(clippy::too_many_arguments)]
pub fn rademacher_report(
    scenario: &Scenario,
    report: &LoopReport,
    n_env_samples: usize,
    rollouts_per_entry: usize,
    n_sigma_draws: usize,
    delta: f64,
    seed: u64,
) -> Result<RademacherReport> {
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
    }
    let sobol = crate::sobol::SobolSequence::new(scenario.config_dim())?;
    let train: Vec<EnvConfig> = (0..n_env_samples)
        .map(|i| scenario.config_from_unit(&sobol.point(i)))
        .collect::<Result<_>>()?;
    let holdout: Vec<EnvConfig> = (0..n_env_samples)
        .map(|i| scenario.config_from_unit(&sobol.point(n_env_samples + i)))
        .collect::<Result<_>>()?;

    let j_seed = rng::mix_seed(seed, 10);
    let j_of = |policy: &PolicyParams, config: &EnvConfig| -> Result<f64> {
        expected_return(scenario, config, policy, rollouts_per_entry, j_seed)
    };

    let mut matrix = Vec::with_capacity(report.policies.len());
    for policy in &report.policies {
        let row: Vec<f64> = train.iter().map(|c| j_of(policy, c)).collect::<Result<_>>()?;
        matrix.push(row);
    }
    let rad_hat = estimate_rademacher(&matrix, n_sigma_draws, rng::mix_seed(seed, 11));

    let k = report.records.len();
    let n = n_env_samples as f64;
    let bound = 2.0 * k as f64 * rad_hat + (8.0 * k as f64 * (1.0 / delta).ln() / n).sqrt();

    let mean = |configs: &[EnvConfig]| -> Result<f64> {
        let mut total = 0.0;
        for c in configs {
            total += j_of(&report.final_policy, c)?;
        }
        Ok(total / configs.len() as f64)
    };
    let epsilon_hat = (mean(&train)? - mean(&holdout)?).abs();

    Ok(RademacherReport {
        n_samples: n_env_samples,
        k_iters: k,
        rad_hat,
        delta,
        bound,
        epsilon_hat,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaKAnalysis {
    pub deltas: Vec<f64>,
    /// Median |delta| of the last three improvements over |delta_1|.
    pub tail_ratio: f64,
}

/// Improvement trace from consecutive return estimates. Requires at least
/// four records. A zero first delta is only acceptable when the tail is zero
/// too; otherwise the trace cannot be normalized.
pub fn delta_k_analysis(records: &[IterationRecord]) -> Result<DeltaKAnalysis> {
    if records.len() < 4 {
        return Err(Error::InsufficientIterations { required: 4, got: records.len() });
    }
    let deltas: Vec<f64> =
        records.windows(2).map(|w| w[1].j_estimate - w[0].j_estimate).collect();
    let mut tail: Vec<f64> = deltas[deltas.len() - 3..].iter().map(|d| d.abs()).collect();
    tail.sort_by(|a, b| a.partial_cmp(b).expect("finite deltas"));
    let median = tail[1];
    let first = deltas[0].abs();
    let tail_ratio = if first == 0.0 {
        if median == 0.0 {
            0.0
        } else {
            return Err(Error::DegenerateTrace);
        }
    } else {
        median / first
    };
    Ok(DeltaKAnalysis { deltas, tail_ratio })
}

/// Return-difference curve under slip perturbations: for each epsilon, the
/// absolute difference between the expected return under the nominal dynamics
/// and under dynamics with `slip_base` shifted by epsilon, computed with
/// common random numbers.
pub fn model_mismatch_experiment(
    scenario: &Scenario,
    policy: &PolicyParams,
    perturbations: &[f64],
    n_rollouts: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    for &eps in perturbations {
        let shifted = scenario.slip_base + eps;
        if !(0.0..=1.0).contains(&shifted) {
            return Err(Error::InvalidPerturbation { epsilon: eps });
        }
    }
    let nominal = scenario.nominal_config();
    let base_j = expected_return(scenario, &nominal, policy, n_rollouts, seed)?;
    perturbations
        .iter()
        .map(|&eps| {
            let mut shifted = scenario.clone();
            shifted.slip_base = scenario.slip_base + eps;
            let j = expected_return(&shifted, &nominal, policy, n_rollouts, seed)?;
            Ok((eps, (j - base_j).abs()))
        })
        .collect()
}

/// Exact expected return of a (possibly stochastic) tabular policy by
/// propagating the distribution over (cell, arrived) pairs through the known
/// transition model; no sampling involved.
pub fn exact_expected_return(
    scenario: &Scenario,
    config: &EnvConfig,
    action_probs: impl Fn(usize) -> [f64; NUM_ACTIONS],
) -> f64 {
    let n = scenario.num_states();
    let slip = scenario.slip_at(config);
    let goal = scenario.state_index(scenario.goal);
    // State layout: [not arrived; arrived] x cells.
    let mut dist = vec![0.0; 2 * n];
    dist[scenario.state_index(scenario.start)] = 1.0;
    let mut total = 0.0;

    for _ in 0..scenario.horizon {
        let mut next = vec![0.0; 2 * n];
        for s in 0..n {
            // Arrived mass stays put and earns nothing.
            let arrived_mass = dist[n + s];
            if arrived_mass > 0.0 {
                next[n + s] += arrived_mass;
            }
            let mass = dist[s];
            if mass == 0.0 {
                continue;
            }
            let intended = action_probs(s);
            let cell = scenario.cell_at(s);
            let mut exec = [0.0; NUM_ACTIONS];
            for (i, pi) in intended.iter().enumerate() {
                if *pi == 0.0 {
                    continue;
                }
                let probs = executed_action_probs(i, slip);
                for (e, p) in probs.iter().enumerate() {
                    exec[e] += pi * p;
                }
            }
            for (e, pe) in exec.iter().enumerate() {
                if *pe == 0.0 {
                    continue;
                }
                let target = scenario.state_index(apply_move(scenario, cell, Action::from_index(e)));
                let p = mass * pe;
                total += p * scenario.step_cost;
                if s != goal && target == goal {
                    total += p * scenario.goal_reward;
                    next[n + target] += p;
                } else {
                    next[target] += p;
                }
            }
        }
        dist = next;
    }
    total
}

fn enumerate_deterministic_policies(
    scenario: &Scenario,
    mut visit: impl FnMut(&[usize], &PolicyParams) -> Result<()>,
) -> Result<()> {
    let n = scenario.num_states();
    let policies = (NUM_ACTIONS as f64).powi(n as i32);
    if n > 25 || policies > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge { states: n, policies });
    }
    let mut assignment = vec![0usize; n];
    loop {
        // Deterministic policy as a point-mass logit table.
        let mut policy = PolicyParams::uniform(&scenario.name, n);
        for (s, &a) in assignment.iter().enumerate() {
            policy.set_logit(s, a, 1e6);
        }
        visit(&assignment, &policy)?;

        // Advance the base-5 counter.
        let mut digit = 0;
        loop {
            if digit == n {
                return Ok(());
            }
            assignment[digit] += 1;
            if assignment[digit] < NUM_ACTIONS {
                break;
            }
            assignment[digit] = 0;
            digit += 1;
        }
    }
}

fn exact_return_of_assignment(
    scenario: &Scenario,
    config: &EnvConfig,
    assignment: &[usize],
) -> f64 {
    exact_expected_return(scenario, config, |s| {
        let mut probs = [0.0; NUM_ACTIONS];
        probs[assignment[s]] = 1.0;
        probs
    })
}

/// Exact optimal safe return at a configuration: enumerates every
/// deterministic stationary policy, keeps those whose sampled worst-case
/// robustness is non-negative, and maximizes the exact expected return over
/// them. Returns `f64::NEG_INFINITY` when no safe deterministic policy
/// exists.
pub fn oracle_j_star(
    scenario: &Scenario,
    spec: &SafetySpec,
    config: &EnvConfig,
    rollouts_per_eval: usize,
    eval_base_seed: u64,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    enumerate_deterministic_policies(scenario, |assignment, policy| {
        let g =
            policy_robustness(scenario, spec, config, policy, rollouts_per_eval, eval_base_seed)?;
        if !g.violating() {
            best = best.max(exact_return_of_assignment(scenario, config, assignment));
        }
        Ok(())
    })?;
    Ok(best)
}

/// As [`oracle_j_star`], but "safe" means non-violating at *every*
/// configuration of the given set (the certification sweep's notion of
/// safety); the return is evaluated at `j_config`. Unsafe candidates are
/// discarded at their first violating configuration. The candidate count
/// times the sweep size is held to the enumeration budget.
pub fn oracle_j_star_robust(
    scenario: &Scenario,
    spec: &SafetySpec,
    configs: &[EnvConfig],
    j_config: &EnvConfig,
    rollouts_per_eval: usize,
    eval_base_seed: u64,
) -> Result<f64> {
    let n = scenario.num_states();
    let policies = (NUM_ACTIONS as f64).powi(n as i32);
    if policies * configs.len() as f64 > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge { states: n, policies });
    }
    let mut best = f64::NEG_INFINITY;
    enumerate_deterministic_policies(scenario, |assignment, policy| {
        for config in configs {
            let g = policy_robustness(
                scenario,
                spec,
                config,
                policy,
                rollouts_per_eval,
                eval_base_seed,
            )?;
            if g.violating() {
                return Ok(());
            }
        }
        best = best.max(exact_return_of_assignment(scenario, j_config, assignment));
        Ok(())
    })?;
    Ok(best)
}
