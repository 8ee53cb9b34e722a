//! Quantitative reach-avoid safety semantics.
//!
//! The robustness of a trajectory is the signed margin to the unsafe set:
//! negative exactly when the specification is violated. Avoidance is measured
//! from cell centers in continuous coordinates, so the margin varies
//! continuously as hazards move. Policy-level robustness is the worst case
//! over a fixed set of seeded rollouts, which makes it a deterministic
//! function of (policy, configuration).

use crate::error::Result;
use crate::policy::PolicyParams;
use crate::scenario::{EnvConfig, Hazard, HazardTemplate, Scenario};
use crate::sim::{rollout, Trajectory};
use crate::grid::Cell;
use serde::{Deserialize, Serialize};

/// Finite stand-in for "no hazard anywhere": keeps downstream arithmetic
/// (GP fits, minima) finite.
pub const ROBUSTNESS_CAP: f64 = 1e6;

/// Reach-avoid specification: avoid every configured hazard disk, and, if a
/// deadline is set, reach the goal no later than that step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetySpec {
    hazards: Vec<HazardTemplate>,
    goal: Cell,
    pub goal_deadline: Option<usize>,
}

impl SafetySpec {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        SafetySpec {
            hazards: scenario.hazard_templates().to_vec(),
            goal: scenario.goal,
            goal_deadline: scenario.goal_deadline,
        }
    }

    /// Hazard disks instantiated for a configuration.
    pub fn hazards(&self, config: &EnvConfig) -> Vec<Hazard> {
        self.hazards
            .iter()
            .map(|t| {
                // Same instantiation rule as the scenario's; templates were
                // validated there.
                let value = |src: &crate::scenario::CoordSource| match *src {
                    crate::scenario::CoordSource::Fixed(v) => v,
                    crate::scenario::CoordSource::Coord { index, .. } => config.values()[index],
                };
                Hazard {
                    center: (value(&t.center_x), value(&t.center_y)),
                    radius: value(&t.radius),
                }
            })
            .collect()
    }
}

/// Signed robustness margin; violating exactly when negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessValue {
    pub value: f64,
}

impl RobustnessValue {
    pub fn violating(&self) -> bool {
        self.value < 0.0
    }
}

/// Margin of a single cell against a hazard set: minimum over hazards of
/// (distance from cell center to hazard center minus radius), capped.
pub fn state_margin(hazards: &[Hazard], cell: Cell) -> f64 {
    hazards
        .iter()
        .map(|h| h.margin(cell.center()))
        .fold(ROBUSTNESS_CAP, f64::min)
}

/// Robustness of one trajectory: the worst per-step avoidance margin, and,
/// when a deadline is set, additionally the reach margin
/// `(deadline - first goal hit) / horizon` (or -1 if the goal is never
/// reached).
pub fn trajectory_robustness(
    spec: &SafetySpec,
    traj: &Trajectory,
    config: &EnvConfig,
) -> RobustnessValue {
    let hazards = spec.hazards(config);
    let avoid = traj
        .states
        .iter()
        .map(|&c| state_margin(&hazards, c))
        .fold(ROBUSTNESS_CAP, f64::min);
    let value = match spec.goal_deadline {
        None => avoid,
        Some(deadline) => {
            let horizon = traj.steps().max(1) as f64;
            let reach = match traj.states.iter().position(|&c| c == spec.goal) {
                Some(hit) => (deadline as f64 - hit as f64) / horizon,
                None => -1.0,
            };
            avoid.min(reach)
        }
    };
    RobustnessValue { value }
}

/// Worst-case robustness over `m_rollouts` seeded rollouts
/// (`base_seed .. base_seed + m_rollouts`). This is the scalar objective the
/// falsifier minimizes.
pub fn policy_robustness(
    scenario: &Scenario,
    spec: &SafetySpec,
    config: &EnvConfig,
    policy: &PolicyParams,
    m_rollouts: usize,
    base_seed: u64,
) -> Result<RobustnessValue> {
    policy_robustness_witness(scenario, spec, config, policy, m_rollouts, base_seed)
        .map(|(value, _)| value)
}

/// As [`policy_robustness`], also returning the rollout that attains the
/// minimum (ties broken by lowest seed).
pub fn policy_robustness_witness(
    scenario: &Scenario,
    spec: &SafetySpec,
    config: &EnvConfig,
    policy: &PolicyParams,
    m_rollouts: usize,
    base_seed: u64,
) -> Result<(RobustnessValue, Trajectory)> {
    assert!(m_rollouts >= 1, "m_rollouts must be at least 1");
    let mut worst: Option<(RobustnessValue, Trajectory)> = None;
    for i in 0..m_rollouts {
        let traj = rollout(scenario, config, policy, base_seed.wrapping_add(i as u64))?;
        let value = trajectory_robustness(spec, &traj, config);
        let replace = match &worst {
            None => true,
            Some((best, _)) => value.value < best.value,
        };
        if replace {
            worst = Some((value, traj));
        }
    }
    Ok(worst.expect("at least one rollout"))
}
