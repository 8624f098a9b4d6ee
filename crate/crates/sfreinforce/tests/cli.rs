use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sfreinforce"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const CHAIN: &str = r#"{"env": {"kind": "chain", "length": 3, "forward_cost": 1.0, "stay_cost": 2.0},
  "seeds": [3], "diag_every": 10}"#;

/// Three states with one action each: stay w.p. 0.5 or terminate, cost 1.
const ONE_ACTION: &str = r#"{
  "p": 3, "actions": [1, 1, 1],
  "transitions": [[[0.5, 0, 0, 0.5]], [[0, 0.5, 0, 0.5]], [[0, 0, 0.5, 0.5]]],
  "costs": [[[1, 1, 1, 1]], [[1, 1, 1, 1]], [[1, 1, 1, 1]]],
  "nu": [0.25, 0.25, 0.5]
}"#;

#[test]
fn one_iteration_run_has_one_row() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", CHAIN);
    let out = run(tmp.path(), &["train", "--config", "c.json", "--iters", "1", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("o/sf1_seed3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let summary = json(&tmp.path().join("o/summary.json"));
    assert_eq!(summary["seeds"][0]["iterations"], 1);
    assert_eq!(summary["seeds"][0]["status"], "ok");
}

#[test]
fn artifacts_embed_resolved_config() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", CHAIN);
    let out = run(tmp.path(), &["train", "--config", "c.json", "--iters", "5", "--out", "o", "--project-perturbation"]);
    assert_eq!(code(&out), 0);
    for file in ["o/summary.json", "o/sf1_seed3.json"] {
        let cfg = &json(&tmp.path().join(file))["config"];
        assert_eq!(cfg["iters"], 5);
        assert_eq!(cfg["project_perturbation"], true);
        assert_eq!(cfg["schedule"]["a0"], 0.05);
        assert_eq!(cfg["box_half_width"], 10.0);
        assert_eq!(cfg["env"]["kind"], "chain");
    }
}

#[test]
fn identical_invocations_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", CHAIN);
    for (dir, workers) in [("a", "1"), ("b", "3")] {
        let out =
            run(tmp.path(), &["train", "--config", "c.json", "--iters", "300", "--out", dir, "--workers", workers]);
        assert_eq!(code(&out), 0);
    }
    for f in ["sf1_seed3.csv", "sf1_seed3.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        // the sidecar embeds output_dir, which differs
        if f.ends_with(".json") {
            let (mut ja, mut jb): (Value, Value) =
                (serde_json::from_slice(&a).unwrap(), serde_json::from_slice(&b).unwrap());
            ja["config"]["output_dir"] = Value::Null;
            jb["config"]["output_dir"] = Value::Null;
            assert_eq!(ja, jb);
        } else {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "bad_schedule.json", r#"{"schedule": {"alpha": 0.6, "gamma": 0.3}, "iters": 2}"#);
    write(tmp.path(), "dup.json", r#"{"seeds": [1, 1]}"#);
    write(tmp.path(), "typo.json", r#"{"iterations": 10}"#);
    write(
        tmp.path(),
        "grid.json",
        r#"{"env": {"kind": "gridworld", "width": 1, "height": 1, "goal": [0, 0], "step_cost": 1, "slip": 0}}"#,
    );
    for cfg in ["bad_schedule.json", "dup.json", "typo.json", "grid.json", "missing.json"] {
        let out = run(tmp.path(), &["train", "--config", cfg, "--out", "o"]);
        assert_eq!(code(&out), 2, "{cfg}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
    }
    assert!(!tmp.path().join("o").exists());
    let out = run(tmp.path(), &["train", "--config", "bad_schedule.json", "--allow-bad-schedule", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = run(tmp.path(), &["frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn numeric_abort_keeps_partial_artifacts() {
    let tmp = TempDir::new().unwrap();
    // returns overflow to infinity after two steps
    write(
        tmp.path(),
        "huge.json",
        r#"{"p": 1, "actions": [2], "transitions": [[[0.9, 0.1], [0.9, 0.1]]],
            "costs": [[[1e308, 1e308], [1e308, 1e308]]], "nu": [1]}"#,
    );
    let out = run(tmp.path(), &["train", "--model", "huge.json", "--iters", "50", "--seed", "0", "--out", "o"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&tmp.path().join("o/summary.json"));
    assert_eq!(summary["failed_seeds"], 1);
    assert_eq!(summary["seeds"][0]["status"], "failed");
    assert!(summary["seeds"][0]["error"].as_str().unwrap().contains("aborted at iteration"));
    let csv = fs::read_to_string(tmp.path().join("o/sf1_seed0.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert!(rows < 50, "{rows}");
}

#[test]
fn grad_check_exit_codes() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "one.json", ONE_ACTION);
    let out = run(tmp.path(), &["grad-check", "--model", "one.json"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative error 0.000e0"));

    write(
        tmp.path(),
        "ssp.json",
        r#"{"env": {"kind": "random_ssp", "states": 10, "actions": 3,
        "eps_terminal": 0.1, "cost_range": [0, 1], "seed": 4}}"#,
    );
    let out = run(tmp.path(), &["grad-check", "--config", "ssp.json", "--out", "gc"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&tmp.path().join("gc/grad_check.json"));
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(report["exact"].as_array().unwrap().len(), 30);

    // a huge step makes the finite differences useless
    let out = run(tmp.path(), &["grad-check", "--config", "ssp.json", "--h", "3"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));

    write(
        tmp.path(),
        "trap.json",
        r#"{"p": 1, "actions": [1], "transitions": [[[1.0, 0.0]]], "costs": [[[1, 1]]], "nu": [1]}"#,
    );
    let out = run(tmp.path(), &["grad-check", "--model", "trap.json"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not proper"));
}

#[test]
fn theta_file_is_used() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", CHAIN);
    write(
        tmp.path(),
        "theta.json",
        r#"{"theta": [5, -5, 5, -5, 5, -5], "index_map": [[0,0],[0,1],[1,0],[1,1],[2,0],[2,1]]}"#,
    );
    write(tmp.path(), "short.json", "[1, 2]");
    let out = run(tmp.path(), &["solve", "--config", "c.json", "--theta", "theta.json"]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let v = report["policy_values"][0].as_f64().unwrap();
    // nearly always advancing: close to V*(0) = 3
    assert!(v > 3.0 && v < 3.01, "{v}");
    let out = run(tmp.path(), &["solve", "--config", "c.json", "--theta", "short.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bias_sweep_zero_gradient_and_scaling() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "one.json", ONE_ACTION);
    let sweep = |n: &str, dir: &str| {
        let out = run(
            tmp.path(),
            &[
                "bias-sweep",
                "--model",
                "one.json",
                "--seed",
                "1",
                "--deltas",
                "0.5,0.25",
                "--n-samples",
                n,
                "--out",
                dir,
            ],
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let mut rdr = csv::Reader::from_path(tmp.path().join(dir).join("bias_sweep.csv")).unwrap();
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            ["delta", "coord", "mc_mean", "exact", "std_err", "n_samples"]
        );
        rdr.records()
            .map(|r| {
                let r = r.unwrap();
                (r[2].parse::<f64>().unwrap(), r[3].parse::<f64>().unwrap(), r[4].parse::<f64>().unwrap())
            })
            .collect::<Vec<_>>()
    };
    let small = sweep("20000", "s");
    assert_eq!(small.len(), 6);
    for &(mean, exact, se) in &small {
        assert_eq!(exact, 0.0);
        assert!(mean.abs() <= 4.0 * se, "{mean} {se}");
    }
    let big = sweep("40000", "b");
    for (s, b) in small.iter().zip(&big) {
        let ratio = b.2 / s.2;
        assert!((ratio - 0.5f64.sqrt()).abs() <= 0.1 * 0.5f64.sqrt(), "{ratio}");
    }
    let out = run(tmp.path(), &["bias-sweep", "--model", "one.json", "--n-samples", "100"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn compare_respects_episode_budget() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", CHAIN);
    let budget = 1000;
    let out = run(tmp.path(), &["compare", "--config", "c.json", "--budget", "1000", "--out", "cmp"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&tmp.path().join("cmp/compare.json"));
    let d = 6;
    for row in report["rows"].as_array().unwrap() {
        let used = row["episodes_used"].as_u64().unwrap();
        let per = row["episodes_per_update"].as_u64().unwrap();
        assert!(used <= budget && used + per > budget, "{row}");
        if row["algorithm"] == "KW-descent" {
            assert_eq!(per, 2 * d);
            assert_eq!(row["iterations"], budget / (2 * d));
        } else {
            assert_eq!(per, 1);
        }
    }
    assert!(tmp.path().join("cmp/compare.csv").exists());
    let out = run(tmp.path(), &["compare", "--config", "c.json", "--budget", "5", "--out", "cmp2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn solve_prints_optimal_values() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "g.json",
        r#"{"env": {"kind": "gridworld", "width": 2, "height": 1, "goal": [1, 0], "step_cost": 1.5, "slip": 0}}"#,
    );
    let out = run(tmp.path(), &["solve", "--config", "g.json"]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["optimal_values"][0].as_f64().unwrap(), 1.5);
    assert!(report["p_hat"].as_f64().unwrap() < 1.0);
}
