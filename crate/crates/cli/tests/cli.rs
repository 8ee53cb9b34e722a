//! Exit-code and file-contract tests driven through the built binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn cegrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cegrl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_args(config: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut args = vec![
        "run".to_string(),
        "--config".into(),
        config.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn safe_scenario_certifies_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = run_args(&scenario("open-3x3.toml"), &out, &["--seed", "1", "--verify-samples", "500"]);
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let output = cegrl(&args);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["certified"], serde_json::Value::Bool(true));
    assert_eq!(summary["certificate"], "sampling");
}

#[test]
fn budget_exhaustion_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = run_args(
        &scenario("tiny-2state.toml"),
        &out,
        &["--seed", "5", "--max-iters", "1", "--verify-samples", "200"],
    );
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let output = cegrl(&args);
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["certified"], serde_json::Value::Bool(false));
    assert_eq!(summary["terminated_reason"], "budget");
}

#[test]
fn malformed_scenario_exits_one_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"x\"\nwidth = \"wat\"\n").unwrap();
    let out = dir.path().join("run");
    let args = run_args(&bad, &out, &[]);
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let output = cegrl(&args);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("width"), "stderr should name the field: {stderr}");
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let base = run_args(
        &scenario("open-3x3.toml"),
        &out,
        &["--seed", "1", "--verify-samples", "200"],
    );
    let base: Vec<&str> = base.iter().map(|s| s.as_str()).collect();
    assert_eq!(cegrl(&base).status.code(), Some(0));
    let again = cegrl(&base);
    assert_eq!(again.status.code(), Some(1), "second run must refuse");
    let mut forced: Vec<&str> = base.clone();
    forced.push("--force");
    assert_eq!(cegrl(&forced).status.code(), Some(0));
}

fn write_policy_snapshot(scenario_file: &Path, dest: &Path, greedy_right: bool) {
    let text = fs::read_to_string(scenario_file).unwrap();
    let s = cegrl::scenario::Scenario::from_toml(&text).unwrap();
    let mut p = cegrl::policy::PolicyParams::uniform(&s.name, s.num_states());
    if greedy_right {
        for st in 0..s.num_states() {
            p.set_logit(st, cegrl::grid::Action::Right.index(), 1e6);
        }
    }
    fs::write(dest, p.to_json()).unwrap();
}

#[test]
fn falsify_unfalsifiable_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    write_policy_snapshot(&scenario("open-3x3.toml"), &policy, false);
    let out = dir.path().join("f");
    let output = cegrl(&[
        "falsify",
        "--config",
        scenario("open-3x3.toml").to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--budget",
        "16",
    ]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let artifact: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("falsification.json")).unwrap())
            .unwrap();
    assert_eq!(artifact["counterexamples"].as_array().unwrap().len(), 0);
}

#[test]
fn falsify_unsafe_policy_exits_three_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    write_policy_snapshot(&scenario("tiny-2state.toml"), &policy, true);
    let run = |out: &Path| {
        let output = cegrl(&[
            "falsify",
            "--config",
            scenario("tiny-2state.toml").to_str().unwrap(),
            "--policy",
            policy.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
            "--budget",
            "20",
        ]);
        assert_eq!(output.status.code(), Some(3), "{output:?}");
        fs::read_to_string(out.join("falsification.json")).unwrap()
    };
    let a = run(&dir.path().join("f1"));
    let b = run(&dir.path().join("f2"));
    assert_eq!(a, b, "falsification must be reproducible byte for byte");
}

#[test]
fn falsify_missing_policy_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let output = cegrl(&[
        "falsify",
        "--config",
        scenario("tiny-2state.toml").to_str().unwrap(),
        "--policy",
        dir.path().join("nope.json").to_str().unwrap(),
        "--out",
        dir.path().join("f").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn verify_reports_violations_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("policy.json");
    write_policy_snapshot(&scenario("tiny-2state.toml"), &policy, true);
    let output = cegrl(&[
        "verify",
        "--config",
        scenario("tiny-2state.toml").to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--samples",
        "200",
    ]);
    assert_eq!(output.status.code(), Some(3), "{output:?}");
}

#[test]
fn diagnose_full_run_emits_four_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = run_args(
        &scenario("tiny-2state.toml"),
        &out,
        &["--seed", "7", "--verify-samples", "500"],
    );
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_eq!(cegrl(&args).status.code(), Some(0));

    // Remove what run already wrote so diagnose provably recreates it.
    fs::remove_file(out.join("diagnostics.json")).unwrap();
    fs::remove_dir_all(out.join("plots")).unwrap();

    let output = cegrl(&["diagnose", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    for name in ["g_min.csv", "delta_k.csv", "regret.csv", "model_mismatch.csv"] {
        assert!(out.join("plots").join(name).exists(), "missing plots/{name}");
    }
    assert!(out.join("diagnostics.json").exists());
}

#[test]
fn diagnose_short_run_records_delta_warning() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = run_args(
        &scenario("tiny-2state.toml"),
        &out,
        &["--seed", "5", "--max-iters", "2", "--verify-samples", "200"],
    );
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_eq!(cegrl(&args).status.code(), Some(2));

    let output = cegrl(&["diagnose", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("diagnostics.json")).unwrap()).unwrap();
    assert!(diag["lipschitz"].is_object(), "lipschitz report expected");
    assert!(diag["delta_k"].is_null());
    let warnings = diag["warnings"].as_array().unwrap();
    assert!(
        warnings.iter().any(|w| w.as_str().unwrap().contains("delta-k")),
        "expected a delta-k warning, got {warnings:?}"
    );
}

#[test]
fn diagnose_incomplete_run_exits_one_listing_missing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = run_args(
        &scenario("tiny-2state.toml"),
        &out,
        &["--seed", "5", "--max-iters", "1", "--verify-samples", "100"],
    );
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_eq!(cegrl(&args).status.code(), Some(2));
    fs::remove_file(out.join("iterations.csv")).unwrap();

    let output = cegrl(&["diagnose", out.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("iterations.csv"), "{stderr}");
}

#[test]
fn serialized_run_replays_recorded_robustness_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = run_args(
        &scenario("tiny-2state.toml"),
        &out,
        &["--seed", "11", "--verify-samples", "500"],
    );
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let code = cegrl(&args).status.code().unwrap();
    assert!(code == 0 || code == 2);

    // Everything below comes from disk, not from the in-process run.
    let (scenario, _, summary, report) = cegrl_cli::artifacts::read_run_dir(&out).unwrap();
    let spec = cegrl::robustness::SafetySpec::from_scenario(&scenario);
    let fcfg = summary.loop_config.falsifier_schedule();
    assert!(!report.counterexamples.is_empty());
    for rec in &report.counterexamples {
        let held = &report.policies[rec.outer_iteration - 1];
        let again = cegrl::robustness::policy_robustness(
            &scenario,
            &spec,
            &rec.ce.config,
            held,
            fcfg.rollouts_per_eval,
            fcfg.eval_base_seed(),
        )
        .unwrap();
        assert_eq!(again.value, rec.ce.g_value, "serialized counterexample must replay");
    }
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let args = run_args(
            &scenario("tiny-2state.toml"),
            &out,
            &["--seed", "7", "--verify-samples", "500"],
        );
        let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        assert_eq!(cegrl(&args).status.code(), Some(0));
        outputs.push(fs::read(out.join("iterations.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}
