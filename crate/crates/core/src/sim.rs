//! Seeded rollouts and Monte-Carlo return estimates.
//!
//! A rollout is a pure function of (scenario, config, policy, seed). Per step
//! the generator draws, in this fixed order: one uniform to sample the
//! intended action from the policy, one uniform for the slip test, and (only
//! on a slip) one uniform for the replacement action. After the agent first
//! transitions into the goal it is absorbed there: the recorded action is
//! `Stay`, no randomness is consumed, and the per-step reward is zero.

use crate::error::{Error, Result};
use crate::grid::{Action, Cell, ACTIONS, NUM_ACTIONS};
use crate::policy::PolicyParams;
use crate::rng;
use crate::scenario::{EnvConfig, Scenario};
use serde::{Deserialize, Serialize};

/// One episode: `states` has `horizon + 1` entries starting at the scenario's
/// start cell, `actions` and `rewards` have `horizon` entries each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Cell>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }
}

/// Moves a cell by an action, clipping at the grid walls.
pub fn apply_move(scenario: &Scenario, cell: Cell, action: Action) -> Cell {
    let (dx, dy) = action.delta();
    let x = (cell.x as i64 + dx).clamp(0, scenario.width as i64 - 1);
    let y = (cell.y as i64 + dy).clamp(0, scenario.height as i64 - 1);
    Cell::new(x as u32, y as u32)
}

/// Executed-action distribution when the agent intends `intended`: with
/// probability `1 - slip` the intended action runs, otherwise a uniformly
/// random one does.
pub fn executed_action_probs(intended: usize, slip: f64) -> [f64; NUM_ACTIONS] {
    let mut probs = [slip / NUM_ACTIONS as f64; NUM_ACTIONS];
    probs[intended] += 1.0 - slip;
    probs
}

/// Transition distribution over successor cells for (cell, intended action).
/// Successors are aggregated, listed in the fixed action order of first
/// occurrence.
pub fn successor_distribution(
    scenario: &Scenario,
    config: &EnvConfig,
    cell: Cell,
    intended: Action,
) -> Vec<(Cell, f64)> {
    let slip = scenario.slip_at(config);
    let probs = executed_action_probs(intended.index(), slip);
    let mut out: Vec<(Cell, f64)> = Vec::with_capacity(NUM_ACTIONS);
    for (a, &p) in ACTIONS.iter().zip(&probs) {
        if p == 0.0 {
            continue;
        }
        let next = apply_move(scenario, cell, *a);
        match out.iter_mut().find(|(c, _)| *c == next) {
            Some((_, q)) => *q += p,
            None => out.push((next, p)),
        }
    }
    out
}

fn check_policy_shape(scenario: &Scenario, policy: &PolicyParams) -> Result<()> {
    if policy.num_states() != scenario.num_states() {
        return Err(Error::DimensionMismatch {
            expected: scenario.num_states(),
            got: policy.num_states(),
            context: "policy state table",
        });
    }
    Ok(())
}

pub fn rollout(
    scenario: &Scenario,
    config: &EnvConfig,
    policy: &PolicyParams,
    seed: u64,
) -> Result<Trajectory> {
    check_policy_shape(scenario, policy)?;
    let slip = scenario.slip_at(config);
    let mut rng = rng::stream(seed);
    let horizon = scenario.horizon;

    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);

    let mut cell = scenario.start;
    let mut arrived = false;
    states.push(cell);

    for _ in 0..horizon {
        let action = if arrived {
            Action::Stay
        } else {
            let probs = policy.action_distribution(scenario.state_index(cell));
            let mut executed = rng::sample_index(&mut rng, &probs);
            if rng::unit_f64(&mut rng) < slip {
                let u = rng::unit_f64(&mut rng);
                executed = ((u * NUM_ACTIONS as f64) as usize).min(NUM_ACTIONS - 1);
            }
            Action::from_index(executed)
        };
        let next = apply_move(scenario, cell, action);
        let reward = if arrived {
            0.0
        } else {
            let mut r = scenario.step_cost;
            if cell != scenario.goal && next == scenario.goal {
                arrived = true;
                r += scenario.goal_reward;
            }
            r
        };
        states.push(next);
        actions.push(action);
        rewards.push(reward);
        cell = next;
    }

    Ok(Trajectory { states, actions, rewards, seed })
}

/// Monte-Carlo estimate of the expected return under common random numbers:
/// rollouts are seeded `base_seed .. base_seed + n_rollouts`.
pub fn expected_return(
    scenario: &Scenario,
    config: &EnvConfig,
    policy: &PolicyParams,
    n_rollouts: usize,
    base_seed: u64,
) -> Result<f64> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument("n_rollouts must be at least 1".into()));
    }
    let mut total = 0.0;
    for i in 0..n_rollouts {
        let traj = rollout(scenario, config, policy, base_seed.wrapping_add(i as u64))?;
        total += traj.total_reward();
    }
    Ok(total / n_rollouts as f64)
}

/// Per-rollout returns for the same seed schedule as [`expected_return`];
/// used where the caller also needs the sample variance.
pub fn return_samples(
    scenario: &Scenario,
    config: &EnvConfig,
    policy: &PolicyParams,
    n_rollouts: usize,
    base_seed: u64,
) -> Result<Vec<f64>> {
    (0..n_rollouts)
        .map(|i| {
            rollout(scenario, config, policy, base_seed.wrapping_add(i as u64))
                .map(|t| t.total_reward())
        })
        .collect()
}
