//! Tabular softmax policies, reward tables, and the entropy-regularized
//! finite-horizon planner.
//!
//! The planner runs the soft Bellman backup
//!
//! ```text
//! V_T(s)   = r(s)
//! Q_t(s,a) = r(s) + E[V_{t+1}(s') | s, a]
//! V_t(s)   = lambda * log sum_a exp(Q_t(s,a) / lambda)
//! ```
//!
//! On deterministic dynamics the per-step policies `pi_t(a|s) proportional to
//! exp(Q_t(s,a)/lambda)` induce exactly the tilted trajectory distribution
//! `P(xi) proportional to exp(R(xi)/lambda)` with `R(xi)` the sum of state
//! rewards along the trajectory (all `horizon + 1` states). The returned
//! stationary table collapses the pass to the t = 0 logits; the full
//! per-step plan is kept on [`SoftPlan`] for exact evaluation.

use crate::error::{Error, Result};
use crate::grid::NUM_ACTIONS;
use crate::scenario::{EnvConfig, Scenario};
use crate::sim::successor_distribution;
use serde::{Deserialize, Serialize};

/// Tabular policy parameters: one logit row of five actions per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    scenario_id: String,
    num_states: usize,
    logits: Vec<f64>,
}

impl PolicyParams {
    /// All-zero logits, i.e. the uniform policy.
    pub fn uniform(scenario_id: &str, num_states: usize) -> Self {
        PolicyParams {
            scenario_id: scenario_id.to_string(),
            num_states,
            logits: vec![0.0; num_states * NUM_ACTIONS],
        }
    }

    pub fn from_rows(scenario_id: &str, rows: Vec<[f64; NUM_ACTIONS]>) -> Result<Self> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("policy logits must be finite".into()));
        }
        Ok(PolicyParams {
            scenario_id: scenario_id.to_string(),
            num_states: rows.len(),
            logits: rows.into_iter().flatten().collect(),
        })
    }

    pub fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.logits[state * NUM_ACTIONS..(state + 1) * NUM_ACTIONS]
    }

    pub fn set_logit(&mut self, state: usize, action: usize, value: f64) {
        self.logits[state * NUM_ACTIONS + action] = value;
    }

    /// Softmax of the state's logit row.
    pub fn action_distribution(&self, state: usize) -> [f64; NUM_ACTIONS] {
        softmax(self.row(state))
    }

    /// Weighted average action entropy, `sum_s w_s H(pi(.|s))`, in nats.
    /// `state_weights` must sum to one.
    pub fn entropy(&self, state_weights: &[f64]) -> f64 {
        assert_eq!(state_weights.len(), self.num_states, "weight vector shape");
        let total: f64 = state_weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "state weights must sum to 1");
        state_weights
            .iter()
            .enumerate()
            .map(|(s, &w)| {
                if w == 0.0 {
                    0.0
                } else {
                    w * entropy_of(&self.action_distribution(s))
                }
            })
            .sum()
    }

    /// Same distribution, with each logit row shifted to zero mean. Softmax is
    /// shift-invariant, so this fixes a canonical representative and makes
    /// parameter distances meaningful.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for s in 0..self.num_states {
            let row = &mut out.logits[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS];
            let mean: f64 = row.iter().sum::<f64>() / NUM_ACTIONS as f64;
            for v in row {
                *v -= mean;
            }
        }
        out
    }

    /// Euclidean distance between two parameter tables.
    pub fn l2_distance(&self, other: &PolicyParams) -> f64 {
        assert_eq!(self.logits.len(), other.logits.len(), "policy shapes differ");
        self.logits
            .iter()
            .zip(&other.logits)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self + scale * (other - self)` in parameter space.
    pub fn interpolate_toward(&self, other: &PolicyParams, scale: f64) -> PolicyParams {
        assert_eq!(self.logits.len(), other.logits.len(), "policy shapes differ");
        let logits = self
            .logits
            .iter()
            .zip(&other.logits)
            .map(|(a, b)| a + scale * (b - a))
            .collect();
        PolicyParams {
            scenario_id: self.scenario_id.clone(),
            num_states: self.num_states,
            logits,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PolicyParams = serde_json::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("policy snapshot: {e}")))?;
        if p.logits.len() != p.num_states * NUM_ACTIONS {
            return Err(Error::DimensionMismatch {
                expected: p.num_states * NUM_ACTIONS,
                got: p.logits.len(),
                context: "policy snapshot logits",
            });
        }
        Ok(p)
    }
}

pub fn softmax(row: &[f64]) -> [f64; NUM_ACTIONS] {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_ACTIONS];
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

fn entropy_of(probs: &[f64; NUM_ACTIONS]) -> f64 {
    probs
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// State rewards used by the planner: a fixed task component plus a learned
/// penalty component that is kept non-positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    task: Vec<f64>,
    penalty: Vec<f64>,
}

/// Penalties saturate here so that repeated updates cannot drift without
/// bound.
pub const PENALTY_FLOOR: f64 = -10.0;

impl RewardTable {
    /// Task rewards alone: `step_cost` everywhere, `goal_reward` at the goal.
    pub fn task_based(scenario: &Scenario) -> Self {
        let n = scenario.num_states();
        let mut task = vec![scenario.step_cost; n];
        task[scenario.state_index(scenario.goal)] = scenario.goal_reward;
        RewardTable { task, penalty: vec![0.0; n] }
    }

    pub fn num_states(&self) -> usize {
        self.task.len()
    }

    pub fn value(&self, state: usize) -> f64 {
        self.task[state] + self.penalty[state]
    }

    pub fn values(&self) -> Vec<f64> {
        self.task.iter().zip(&self.penalty).map(|(t, p)| t + p).collect()
    }

    pub fn penalty(&self, state: usize) -> f64 {
        self.penalty[state]
    }

    /// Lowers the penalty component by `amount >= 0`, clamped at the floor.
    /// Returns the decrement actually applied.
    pub fn deepen_penalty(&mut self, state: usize, amount: f64) -> f64 {
        debug_assert!(amount >= 0.0);
        let before = self.penalty[state];
        let after = (before - amount).max(PENALTY_FLOOR);
        self.penalty[state] = after;
        before - after
    }
}

/// Full result of a planner run: the collapsed stationary table plus the
/// per-step values and logits of the backward pass.
#[derive(Debug, Clone)]
pub struct SoftPlan {
    pub policy: PolicyParams,
    /// `values[t][s]` for t = 0..=horizon; `values[horizon]` is the terminal
    /// level `r(s)`.
    pub values: Vec<Vec<f64>>,
    step_logits: Vec<Vec<[f64; NUM_ACTIONS]>>,
    pub lambda: f64,
}

impl SoftPlan {
    /// Action distribution the plan prescribes at step `t` in `state`.
    pub fn action_distribution_at(&self, t: usize, state: usize) -> [f64; NUM_ACTIONS] {
        softmax(&self.step_logits[t][state])
    }

    pub fn horizon(&self) -> usize {
        self.step_logits.len()
    }
}

/// Entropy-regularized finite-horizon planning by exact backward induction.
/// `tol` is accepted for interface parity but unused: the finite-horizon pass
/// terminates exactly. `max_iters` bounds the number of backups and must be
/// at least the scenario horizon.
pub fn soft_value_iteration(
    scenario: &Scenario,
    config: &EnvConfig,
    reward: &RewardTable,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<SoftPlan> {
    if lambda <= 0.0 {
        return Err(Error::InvalidArgument("lambda must be positive".into()));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    if reward.num_states() != scenario.num_states() {
        return Err(Error::DimensionMismatch {
            expected: scenario.num_states(),
            got: reward.num_states(),
            context: "reward table",
        });
    }
    if max_iters < scenario.horizon {
        return Err(Error::InvalidArgument(format!(
            "max_iters {max_iters} below horizon {}",
            scenario.horizon
        )));
    }
    let n = scenario.num_states();
    let horizon = scenario.horizon;
    let rewards = reward.values();
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NumericalOverflow("non-finite reward entry".into()));
    }

    // Successor distributions are config- and time-independent; precompute.
    let mut successors = Vec::with_capacity(n * NUM_ACTIONS);
    for s in 0..n {
        let cell = scenario.cell_at(s);
        for a in crate::grid::ACTIONS {
            let dist: Vec<(usize, f64)> = successor_distribution(scenario, config, cell, a)
                .into_iter()
                .map(|(c, p)| (scenario.state_index(c), p))
                .collect();
            successors.push(dist);
        }
    }

    let mut values = vec![vec![0.0; n]; horizon + 1];
    values[horizon].copy_from_slice(&rewards);
    let mut step_logits = vec![vec![[0.0; NUM_ACTIONS]; n]; horizon];

    for t in (0..horizon).rev() {
        for s in 0..n {
            let mut q = [0.0; NUM_ACTIONS];
            for (a, qa) in q.iter_mut().enumerate() {
                let mut expect = 0.0;
                for &(succ, p) in &successors[s * NUM_ACTIONS + a] {
                    expect += p * values[t + 1][succ];
                }
                *qa = rewards[s] + expect;
            }
            if q.iter().any(|v| v.is_nan()) {
                return Err(Error::NumericalOverflow(format!(
                    "NaN soft backup at t={t}, state={s}"
                )));
            }
            let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = q.iter().map(|v| ((v - max) / lambda).exp()).sum();
            values[t][s] = max + lambda * lse.ln();
            for (a, qa) in q.iter().enumerate() {
                step_logits[t][s][a] = qa / lambda;
            }
        }
    }

    let policy = PolicyParams::from_rows(&scenario.name, step_logits[0].clone())?;
    Ok(SoftPlan { policy, values, step_logits, lambda })
}
