//! Library-level end-to-end checks on the bundled two-cell scenario.

use cegrl::driver::{run_loop, verify_sweep, LoopConfig, TerminationReason};
use cegrl::policy::{soft_value_iteration, RewardTable};
use cegrl::robustness::{policy_robustness, SafetySpec};
use cegrl::scenario::Scenario;

const TINY: &str = include_str!("../../../scenarios/tiny-2state.toml");

fn tiny_setup() -> (Scenario, SafetySpec) {
    let scenario = Scenario::from_toml(TINY).unwrap();
    let spec = SafetySpec::from_scenario(&scenario);
    (scenario, spec)
}

fn initial_policy(scenario: &Scenario, lambda: f64) -> cegrl::policy::PolicyParams {
    let reward = RewardTable::task_based(scenario);
    soft_value_iteration(scenario, &scenario.nominal_config(), &reward, lambda, 1e-9, scenario.horizon)
        .unwrap()
        .policy
}

#[test]
fn tiny_scenario_certifies_and_replays() {
    let (scenario, spec) = tiny_setup();
    let initial = initial_policy(&scenario, 2.0);
    let mut cfg = LoopConfig::default();
    cfg.seed = 7;
    cfg.verify_samples = 2000;

    let report = run_loop(&scenario, &spec, &initial, &cfg).unwrap();
    assert!(report.certified, "tiny scenario should certify");
    assert_eq!(report.terminated_reason, TerminationReason::Certified);

    // Certification soundness: the final sweep set, re-evaluated from the
    // serialized artifacts, has no negative robustness.
    let sweep = report.final_sweep.as_ref().unwrap();
    assert!(sweep.min_g >= 0.0);
    let falsifier_cfg = cfg.falsifier_schedule();
    let ce_configs: Vec<_> =
        report.counterexamples.iter().map(|r| r.ce.config.clone()).collect();
    let recheck = verify_sweep(
        &scenario,
        &spec,
        &report.final_policy,
        cfg.verify_samples,
        &ce_configs,
        falsifier_cfg.rollouts_per_eval,
        falsifier_cfg.eval_base_seed(),
    )
    .unwrap();
    assert_eq!(recheck.min_g, sweep.min_g, "sweep must replay exactly");

    // Every recorded counterexample replays to its recorded robustness.
    for rec in &report.counterexamples {
        let held = &report.policies[rec.outer_iteration - 1];
        let again = policy_robustness(
            &scenario,
            &spec,
            &rec.ce.config,
            held,
            falsifier_cfg.rollouts_per_eval,
            falsifier_cfg.eval_base_seed(),
        )
        .unwrap();
        assert_eq!(again.value, rec.ce.g_value);
    }

    // Full rerun determinism.
    let rerun = run_loop(&scenario, &spec, &initial, &cfg).unwrap();
    assert_eq!(rerun.records.len(), report.records.len());
    for (a, b) in rerun.records.iter().zip(&report.records) {
        assert_eq!(a.g_min_estimate, b.g_min_estimate);
        assert_eq!(a.j_estimate, b.j_estimate);
    }
}

#[test]
fn gated_tiny_run_certifies_with_monotone_records() {
    let (scenario, spec) = tiny_setup();
    let initial = initial_policy(&scenario, 2.0);
    let mut cfg = LoopConfig::default();
    cfg.seed = 7;
    cfg.verify_samples = 2000;
    cfg.monotone_gate = true;

    let report = run_loop(&scenario, &spec, &initial, &cfg).unwrap();
    assert!(report.certified);
    for pair in report.records.windows(2) {
        assert!(pair[1].g_min_estimate >= pair[0].g_min_estimate - 1e-9);
    }
}
