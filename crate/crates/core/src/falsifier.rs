//! Bayesian-optimization falsification.
//!
//! The falsifier searches the configuration box for points that minimize the
//! robustness objective, flagging every evaluation with a negative value as a
//! counterexample. The surrogate works on inputs normalized to the unit cube
//! and targets standardized to zero mean and unit scale; acquisition ranking
//! is invariant to both transforms. Candidate pools, evaluation seeds and the
//! initialization design are all derived from the config seed, so a run is a
//! pure function of its inputs.

use crate::error::{Error, Result};
use crate::gp::{fit_hyperparams, Kernel, SurrogateModel};
use crate::policy::PolicyParams;
use crate::robustness::{policy_robustness_witness, SafetySpec};
use crate::rng;
use crate::scenario::{EnvConfig, Scenario};
use crate::sim::Trajectory;
use crate::sobol::SobolSequence;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionKind {
    ExpectedImprovement,
    LowerConfidenceBound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FalsifierConfig {
    /// Space-filling evaluations before the surrogate loop starts.
    pub init_samples: usize,
    /// Total evaluation budget, including initialization.
    pub budget: usize,
    /// Random candidate pool size per acquisition step.
    pub acq_candidates: usize,
    pub acq_kind: AcquisitionKind,
    /// Exploration weight for the lower-confidence-bound rule.
    pub lcb_kappa: f64,
    pub stop_on_first_ce: bool,
    /// Rollouts per robustness evaluation (the worst case is taken).
    pub rollouts_per_eval: usize,
    pub seed: u64,
}

impl Default for FalsifierConfig {
    fn default() -> Self {
        FalsifierConfig {
            init_samples: 8,
            budget: 40,
            acq_candidates: 2048,
            acq_kind: AcquisitionKind::ExpectedImprovement,
            lcb_kappa: 2.0,
            stop_on_first_ce: false,
            rollouts_per_eval: 5,
            seed: 0,
        }
    }
}

// Stream tags for deriving independent RNG streams from the config seed.
const STREAM_EVAL: u64 = 0;
const STREAM_CANDIDATES: u64 = 1;

impl FalsifierConfig {
    /// Base seed of the rollout schedule used for every robustness
    /// evaluation of the run. Fixed per run, so the objective is a
    /// deterministic function of the configuration.
    pub fn eval_base_seed(&self) -> u64 {
        rng::mix_seed(self.seed, STREAM_EVAL)
    }
}

/// A falsifying environment with its witness trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counterexample {
    pub config: EnvConfig,
    pub trajectory: Trajectory,
    pub g_value: f64,
    /// Evaluation index (0-based) at which this counterexample was found.
    pub iteration_found: usize,
}

#[derive(Debug, Clone)]
pub struct FalsificationReport {
    pub counterexamples: Vec<Counterexample>,
    pub best_config: EnvConfig,
    pub best_g: f64,
    pub history: Vec<(EnvConfig, f64)>,
    /// Surrogate state at the end of the run; absent when the run ended
    /// during initialization.
    pub model: Option<SurrogateModel>,
}

/// Search trace of the generic minimizer.
#[derive(Debug, Clone)]
pub struct SearchReport {
    pub history: Vec<(Vec<f64>, f64)>,
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub model: Option<SurrogateModel>,
}

impl SearchReport {
    pub fn evaluations(&self) -> usize {
        self.history.len()
    }
}

/// Acquisition score at a (unit-cube) point; larger is more promising.
///
/// Expected improvement is taken in minimization form,
/// `EI = (best - mu) Phi(z) + sigma phi(z)` with `z = (best - mu) / sigma`,
/// degenerating to `max(0, best - mu)` when sigma vanishes. The LCB score is
/// `-(mu - kappa sigma)`.
pub fn acquisition(
    model: &SurrogateModel,
    x: &[f64],
    best_g: f64,
    cfg: &FalsifierConfig,
) -> Result<f64> {
    let (mean, variance) = model.predict(x)?;
    let sigma = variance.sqrt();
    let score = match cfg.acq_kind {
        AcquisitionKind::ExpectedImprovement => {
            if sigma < 1e-12 {
                (best_g - mean).max(0.0)
            } else {
                let z = (best_g - mean) / sigma;
                (best_g - mean) * normal_cdf(z) + sigma * normal_pdf(z)
            }
        }
        AcquisitionKind::LowerConfidenceBound => -(mean - cfg.lcb_kappa * sigma),
    };
    debug_assert!(score.is_finite());
    Ok(score)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

struct Standardizer {
    mean: f64,
    scale: f64,
}

impl Standardizer {
    fn from(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Standardizer { mean, scale: var.sqrt().max(1e-12) }
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

fn hyperparam_grid(dim: usize) -> Vec<Kernel> {
    [0.05, 0.1, 0.2, 0.4, 0.8, 1.6]
        .iter()
        .map(|&l| Kernel::isotropic(1.0, l, dim, 1e-6).expect("static grid"))
        .collect()
}

/// Minimizes a black-box objective over a bounds box with GP-guided search.
/// Initialization uses a Sobol design; afterwards each step fits the
/// surrogate (re-selecting hyperparameters every five evaluations), scores a
/// uniform candidate pool, and evaluates the acquisition argmax (ties break
/// toward the lowest candidate index). Stops at the budget, or at the first
/// negative value when `stop_on_first_ce` is set.
pub fn minimize(
    mut objective: impl FnMut(&[f64]) -> Result<f64>,
    bounds: &[(f64, f64)],
    cfg: &FalsifierConfig,
) -> Result<SearchReport> {
    if cfg.budget < cfg.init_samples {
        return Err(Error::BudgetTooSmall { budget: cfg.budget, init: cfg.init_samples });
    }
    if cfg.init_samples < 2 {
        return Err(Error::InvalidArgument("init_samples must be at least 2".into()));
    }
    if cfg.acq_candidates == 0 {
        return Err(Error::InvalidArgument("acq_candidates must be at least 1".into()));
    }
    let dim = bounds.len();
    let from_unit = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(bounds).map(|(&x, &(lo, hi))| lo + x * (hi - lo)).collect()
    };

    let sobol = SobolSequence::new(dim)?;
    let mut cand_rng = rng::stream(rng::mix_seed(cfg.seed, STREAM_CANDIDATES));

    let mut unit_points: Vec<Vec<f64>> = Vec::with_capacity(cfg.budget);
    let mut history: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.budget);
    let mut values: Vec<f64> = Vec::with_capacity(cfg.budget);
    let mut model: Option<SurrogateModel> = None;
    let mut kernel: Option<Kernel> = None;

    let evaluate = |unit: Vec<f64>,
                        objective: &mut dyn FnMut(&[f64]) -> Result<f64>,
                        unit_points: &mut Vec<Vec<f64>>,
                        history: &mut Vec<(Vec<f64>, f64)>,
                        values: &mut Vec<f64>|
     -> Result<f64> {
        let point = from_unit(&unit);
        let g = objective(&point)?;
        if !g.is_finite() {
            return Err(Error::NumericalOverflow(format!("objective returned {g}")));
        }
        unit_points.push(unit);
        values.push(g);
        history.push((point, g));
        Ok(g)
    };

    let mut stopped = false;
    for i in 0..cfg.init_samples {
        let g = evaluate(
            sobol.point(i),
            &mut objective,
            &mut unit_points,
            &mut history,
            &mut values,
        )?;
        if cfg.stop_on_first_ce && g < 0.0 {
            stopped = true;
            break;
        }
    }

    while !stopped && history.len() < cfg.budget {
        let refit_grid = kernel.is_none() || values.len() % 5 == 0;
        let std = Standardizer::from(&values);
        let targets: Vec<f64> = values.iter().map(|&v| std.apply(v)).collect();
        if refit_grid {
            kernel = Some(fit_hyperparams(&unit_points, &targets, &hyperparam_grid(dim))?);
        }
        let fitted = SurrogateModel::fit(
            kernel.clone().expect("kernel selected"),
            unit_points.clone(),
            targets,
        )?;
        let best_std = std.apply(values.iter().cloned().fold(f64::INFINITY, f64::min));

        let mut best_cand: Option<(f64, Vec<f64>)> = None;
        for _ in 0..cfg.acq_candidates {
            let cand: Vec<f64> = (0..dim).map(|_| rng::unit_f64(&mut cand_rng)).collect();
            let score = acquisition(&fitted, &cand, best_std, cfg)?;
            let better = match &best_cand {
                None => true,
                Some((s, _)) => score > *s,
            };
            if better {
                best_cand = Some((score, cand));
            }
        }
        model = Some(fitted);

        let (_, chosen) = best_cand.expect("candidate pool is non-empty");
        let g = evaluate(chosen, &mut objective, &mut unit_points, &mut history, &mut values)?;
        if cfg.stop_on_first_ce && g < 0.0 {
            break;
        }
    }

    let (best_idx, best_value) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    Ok(SearchReport {
        best_point: history[best_idx].0.clone(),
        best_value,
        history,
        model,
    })
}

/// Falsifies a policy against a safety specification: minimizes the
/// robustness value over the scenario's configuration box, collecting every
/// violating evaluation (with its witness rollout) as a counterexample.
pub fn falsify(
    scenario: &Scenario,
    spec: &SafetySpec,
    policy: &PolicyParams,
    cfg: &FalsifierConfig,
) -> Result<FalsificationReport> {
    let eval_seed = cfg.eval_base_seed();
    let mut counterexamples = Vec::new();
    let mut eval_index = 0usize;

    let report = {
        let objective = |point: &[f64]| -> Result<f64> {
            let config = scenario.make_config(point.to_vec())?;
            let (value, witness) = policy_robustness_witness(
                scenario,
                spec,
                &config,
                policy,
                cfg.rollouts_per_eval,
                eval_seed,
            )?;
            if value.violating() {
                counterexamples.push(Counterexample {
                    config,
                    trajectory: witness,
                    g_value: value.value,
                    iteration_found: eval_index,
                });
            }
            eval_index += 1;
            Ok(value.value)
        };
        minimize(objective, scenario.config_bounds(), cfg)?
    };

    log::debug!(
        "falsify[{}]: {} evals, best g = {:.6}, {} counterexamples",
        scenario.name,
        report.evaluations(),
        report.best_value,
        counterexamples.len()
    );

    let history = report
        .history
        .into_iter()
        .map(|(point, g)| {
            let config = scenario.make_config(point).expect("evaluated point in bounds");
            (config, g)
        })
        .collect::<Vec<_>>();
    Ok(FalsificationReport {
        counterexamples,
        best_config: scenario.make_config(report.best_point).expect("best point in bounds"),
        best_g: report.best_value,
        history,
        model: report.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Action;
    use crate::robustness::policy_robustness;
    use crate::scenario::{HazardDef, SafetyDef, ScenarioDef, SourceDef};

    fn ei_config() -> FalsifierConfig {
        FalsifierConfig::default()
    }

    fn fitted_flat_model() -> SurrogateModel {
        let kernel = Kernel::isotropic(1.0, 0.5, 2, 1e-6).unwrap();
        SurrogateModel::fit(
            kernel,
            vec![vec![0.1, 0.1], vec![0.9, 0.9]],
            vec![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn ei_at_mean_equals_standard_normal_density() {
        // Far from all data the posterior reverts to the prior: mean 0,
        // variance sigma_f^2 = 1. With best_g = mean = 0 the improvement
        // term vanishes and EI = phi(0) = 1/sqrt(2 pi).
        let model = fitted_flat_model();
        let far = [60.0, 60.0];
        let (mean, variance) = model.predict(&far).unwrap();
        assert!(mean.abs() < 1e-12 && (variance - 1.0).abs() < 1e-9);
        let ei = acquisition(&model, &far, mean, &ei_config()).unwrap();
        assert!((ei - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
        assert!((ei - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn ei_degenerate_sigma_no_improvement() {
        let model = fitted_flat_model();
        // Querying a training point with tiny noise: sigma ~ 0, mean ~ 0;
        // with best_g below the mean, EI must be exactly 0.
        let cfg = ei_config();
        let ei = acquisition(&model, &[0.1, 0.1], -1.0, &cfg).unwrap();
        assert_eq!(ei, 0.0);
    }

    #[test]
    fn lcb_with_zero_kappa_is_negated_mean() {
        let model = fitted_flat_model();
        let mut cfg = ei_config();
        cfg.acq_kind = AcquisitionKind::LowerConfidenceBound;
        cfg.lcb_kappa = 0.0;
        let x = [0.4, 0.6];
        let (mean, _) = model.predict(&x).unwrap();
        let score = acquisition(&model, &x, 0.0, &cfg).unwrap();
        assert!((score - -mean).abs() < 1e-15);
    }

    fn analytic_disk(point: &[f64]) -> f64 {
        let dx = point[0] - 0.3;
        let dy = point[1] - 0.7;
        (dx * dx + dy * dy).sqrt() - 0.2
    }

    #[test]
    fn finds_negative_region_of_analytic_objective() {
        let mut cfg = ei_config();
        cfg.budget = 30;
        cfg.init_samples = 8;
        cfg.seed = 3;
        let report =
            minimize(|p| Ok(analytic_disk(p)), &[(0.0, 1.0), (0.0, 1.0)], &cfg).unwrap();
        assert!(report.best_value < 0.0, "best {}", report.best_value);
        let d = ((report.best_point[0] - 0.3).powi(2)
            + (report.best_point[1] - 0.7).powi(2))
        .sqrt();
        assert!(d < 0.2);
    }

    #[test]
    fn constant_positive_objective_yields_no_counterexamples() {
        let mut cfg = ei_config();
        cfg.budget = 15;
        let report = minimize(|_| Ok(1.0), &[(0.0, 1.0)], &cfg).unwrap();
        assert_eq!(report.best_value, 1.0);
        assert!(report.history.iter().all(|(_, g)| *g == 1.0));
    }

    #[test]
    fn budget_below_init_rejected() {
        let mut cfg = ei_config();
        cfg.budget = 4;
        cfg.init_samples = 8;
        assert!(matches!(
            minimize(|_| Ok(0.0), &[(0.0, 1.0)], &cfg),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let mut cfg = ei_config();
        cfg.budget = 20;
        cfg.seed = 9;
        let run = |cfg: &FalsifierConfig| {
            minimize(|p| Ok(analytic_disk(p)), &[(0.0, 1.0), (0.0, 1.0)], cfg).unwrap()
        };
        let a = run(&cfg);
        let b = run(&cfg);
        assert_eq!(a.history.len(), b.history.len());
        for ((pa, ga), (pb, gb)) in a.history.iter().zip(&b.history) {
            assert_eq!(pa, pb);
            assert_eq!(ga, gb);
        }
    }

    #[test]
    fn history_bounded_and_best_is_minimum() {
        let mut cfg = ei_config();
        cfg.budget = 25;
        let report =
            minimize(|p| Ok(analytic_disk(p)), &[(0.0, 1.0), (0.0, 1.0)], &cfg).unwrap();
        assert!(report.history.len() <= cfg.budget);
        let min = report.history.iter().map(|(_, g)| *g).fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_value, min);
    }

    #[test]
    fn larger_budget_never_worse_with_shared_prefix() {
        let mut best = f64::INFINITY;
        for budget in [10, 20, 30] {
            let mut cfg = ei_config();
            cfg.budget = budget;
            cfg.init_samples = 6;
            cfg.seed = 17;
            let report =
                minimize(|p| Ok(analytic_disk(p)), &[(0.0, 1.0), (0.0, 1.0)], &cfg).unwrap();
            assert!(report.best_value <= best + 1e-15);
            best = report.best_value;
        }
    }

    fn lane_scenario() -> (Scenario, SafetySpec) {
        let s = Scenario::new(ScenarioDef {
            name: "lane".into(),
            width: 5,
            height: 1,
            start: [0, 0],
            goal: [4, 0],
            horizon: 8,
            slip_base: 0.0,
            step_cost: -0.01,
            goal_reward: 1.0,
            hazards: vec![HazardDef {
                center_x: SourceDef::Bounded { bounds: [0.5, 4.5] },
                center_y: SourceDef::Bounded { bounds: [0.0, 1.0] },
                radius: SourceDef::Fixed { fixed: 0.4 },
            }],
            slip_offset: None,
            safety: SafetyDef::default(),
        })
        .unwrap();
        let spec = SafetySpec::from_scenario(&s);
        (s, spec)
    }

    #[test]
    fn counterexamples_reevaluate_to_recorded_value() {
        let (s, spec) = lane_scenario();
        let mut policy = PolicyParams::uniform(&s.name, s.num_states());
        for st in 0..s.num_states() {
            policy.set_logit(st, Action::Right.index(), 1e6);
        }
        let mut cfg = ei_config();
        cfg.budget = 20;
        cfg.init_samples = 6;
        let report = falsify(&s, &spec, &policy, &cfg).unwrap();
        assert!(!report.counterexamples.is_empty(), "rightward walk should be falsifiable");
        for ce in &report.counterexamples {
            assert!(ce.g_value < 0.0);
            let again = policy_robustness(
                &s,
                &spec,
                &ce.config,
                &policy,
                cfg.rollouts_per_eval,
                cfg.eval_base_seed(),
            )
            .unwrap();
            assert_eq!(again.value, ce.g_value);
        }
        assert_eq!(
            report.best_g,
            report.history.iter().map(|(_, g)| *g).fold(f64::INFINITY, f64::min)
        );
    }

    #[test]
    fn stop_on_first_ce_halts_during_initialization() {
        let mut cfg = ei_config();
        cfg.stop_on_first_ce = true;
        cfg.init_samples = 8;
        cfg.budget = 40;
        // Objective negative everywhere: the very first evaluation is a hit.
        let report = minimize(|_| Ok(-0.5), &[(0.0, 1.0)], &cfg).unwrap();
        assert_eq!(report.evaluations(), 1);
        assert!(report.model.is_none());
    }
}
