//! Policy refinement from counterexamples.
//!
//! The reward update is a visitation contrast: states where counterexample
//! trajectories spend violating time more often than the safe contrast set
//! get their penalty deepened, spread to nearby cells with linear decay.
//! Replanning runs under the worst counterexample's configuration, and the
//! parameter step is capped by Euclidean scaling so that
//! `||theta' - theta|| <= step_cap` holds by construction.

use crate::error::{Error, Result};
use crate::falsifier::Counterexample;
use crate::policy::{soft_value_iteration, PolicyParams, RewardTable};
use crate::robustness::state_margin;
use crate::scenario::Scenario;
use crate::sim::{rollout, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinerConfig {
    /// Entropy trade-off of the planner.
    pub lambda: f64,
    /// Scale of the penalty applied per unit of visitation contrast.
    pub penalty_rate: f64,
    /// Spatial spread of penalties around visited cells (grid units);
    /// 0 penalizes only the visited cell.
    pub penalty_radius: f64,
    /// Upper bound on the parameter step; `f64::INFINITY` disables capping.
    pub step_cap: f64,
    /// Contrast rollouts drawn under the nominal configuration.
    pub n_safe_rollouts: usize,
    pub seed: u64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            lambda: 0.05,
            penalty_rate: 4.0,
            penalty_radius: 2.0,
            step_cap: 100.0,
            n_safe_rollouts: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefinementResult {
    pub new_policy: PolicyParams,
    pub reward: RewardTable,
    pub step_norm: f64,
    /// States whose penalty changed, with the (negative) delta applied.
    pub penalized_states: Vec<(usize, f64)>,
}

/// Per-state visit counts across all steps of all trajectories. Each
/// trajectory contributes `steps + 1` counts.
pub fn visitation_counts(trajectories: &[Trajectory], scenario: &Scenario) -> Vec<f64> {
    let mut counts = vec![0.0; scenario.num_states()];
    for traj in trajectories {
        for &cell in &traj.states {
            counts[scenario.state_index(cell)] += 1.0;
        }
    }
    counts
}

/// Visit counts over the counterexamples' *violating* timesteps: states whose
/// margin against the counterexample's instantiated hazards is negative. When
/// a counterexample violates without any hazard overlap (a missed deadline),
/// its full visitation is used instead.
fn violating_counts(ces: &[Counterexample], scenario: &Scenario) -> Vec<f64> {
    let mut counts = vec![0.0; scenario.num_states()];
    for ce in ces {
        let hazards = scenario.hazards_at(&ce.config);
        let mut any = false;
        for &cell in &ce.trajectory.states {
            if state_margin(&hazards, cell) < 0.0 {
                counts[scenario.state_index(cell)] += 1.0;
                any = true;
            }
        }
        if !any {
            for &cell in &ce.trajectory.states {
                counts[scenario.state_index(cell)] += 1.0;
            }
        }
    }
    counts
}

fn normalize(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|c| c / total).collect()
}

/// Applies the contrast update: for each state,
/// `penalty -= rate * max(0, nu_ce - nu_safe)`, spread to cells within
/// `penalty_radius` with linear decay and clamped at the penalty floor. The
/// task component is untouched.
pub fn update_reward(
    reward: &RewardTable,
    counterexamples: &[Counterexample],
    safe_trajectories: &[Trajectory],
    scenario: &Scenario,
    cfg: &RefinerConfig,
) -> Result<(RewardTable, Vec<(usize, f64)>)> {
    if counterexamples.is_empty() {
        return Err(Error::EmptyCounterexampleSet);
    }
    let nu_ce = normalize(&violating_counts(counterexamples, scenario));
    let nu_safe = normalize(&visitation_counts(safe_trajectories, scenario));

    let n = scenario.num_states();
    let mut decrement = vec![0.0; n];
    for s in 0..n {
        let contrast = (nu_ce[s] - nu_safe[s]).max(0.0);
        if contrast == 0.0 {
            continue;
        }
        let amount = cfg.penalty_rate * contrast;
        let source = scenario.cell_at(s).center();
        for (t, dec) in decrement.iter_mut().enumerate() {
            let target = scenario.cell_at(t).center();
            let dist = ((source.0 - target.0).powi(2) + (source.1 - target.1).powi(2)).sqrt();
            let weight = if cfg.penalty_radius > 0.0 {
                (1.0 - dist / cfg.penalty_radius).max(0.0)
            } else if dist == 0.0 {
                1.0
            } else {
                0.0
            };
            *dec += amount * weight;
        }
    }

    let mut updated = reward.clone();
    let mut penalized = Vec::new();
    for (s, &dec) in decrement.iter().enumerate() {
        if dec > 0.0 {
            let applied = updated.deepen_penalty(s, dec);
            penalized.push((s, -applied));
        }
    }
    Ok((updated, penalized))
}

/// One refinement step: draw the safe contrast set under the nominal
/// configuration, update the reward from the counterexamples, replan under
/// the worst counterexample's configuration, and cap the parameter step.
pub fn refine(
    policy: &PolicyParams,
    reward: &RewardTable,
    counterexamples: &[Counterexample],
    scenario: &Scenario,
    cfg: &RefinerConfig,
) -> Result<RefinementResult> {
    if counterexamples.is_empty() {
        return Err(Error::EmptyCounterexampleSet);
    }
    if cfg.lambda <= 0.0 || cfg.penalty_rate <= 0.0 || cfg.step_cap <= 0.0 {
        return Err(Error::InvalidArgument(
            "lambda, penalty_rate and step_cap must be positive".into(),
        ));
    }

    let nominal = scenario.nominal_config();
    let safe: Vec<Trajectory> = (0..cfg.n_safe_rollouts)
        .map(|i| rollout(scenario, &nominal, policy, cfg.seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;

    let (updated_reward, penalized_states) =
        update_reward(reward, counterexamples, &safe, scenario, cfg)?;

    let worst = counterexamples
        .iter()
        .min_by(|a, b| a.g_value.partial_cmp(&b.g_value).expect("finite g values"))
        .expect("non-empty counterexample set");

    let plan = soft_value_iteration(
        scenario,
        &worst.config,
        &updated_reward,
        cfg.lambda,
        1e-9,
        scenario.horizon,
    )?;

    let current = policy.normalized();
    let proposal = plan.policy.normalized();
    let distance = current.l2_distance(&proposal);
    let scale = if distance > 0.0 { (cfg.step_cap / distance).min(1.0) } else { 1.0 };
    let new_policy = current.interpolate_toward(&proposal, scale);
    let step_norm = current.l2_distance(&new_policy);

    Ok(RefinementResult { new_policy, reward: updated_reward, step_norm, penalized_states })
}
