use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Output {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(env!("CARGO_BIN_EXE_posminimax"))
        .args(args)
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn validate_accepts_s1() {
    let out = run(["validate".as_ref(), data("s1.json").as_os_str()]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report = out.json();
    assert_eq!(report["positivity_ok"], true);
    assert_eq!(report["cost_ok"], true);
}

#[test]
fn validate_reports_positivity_violation() {
    let dir = TempDir::new().unwrap();
    let path = write(
        &dir,
        "bad.json",
        r#"{"A":[[0.1]],"B":[[1.0]],"F":[[0.0]],"E":[[1.0]],"G":[[0.0]],"s":[1.0],"r":[0.0],"gamma":[0.0]}"#,
    );
    let out = run(["validate".as_ref(), path.as_os_str()]);
    assert_eq!(out.code, 1);
    let report = out.json();
    assert_eq!(report["positivity_ok"], false);
    assert_eq!(report["violations"].as_array().unwrap().len(), 1);
}

#[test]
fn malformed_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "broken.json", "{\"A\": [[1.0]");
    let out = run(["validate".as_ref(), path.as_os_str()]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("error"));
}

#[test]
fn synth_s1_golden() {
    let out = run(["synth".as_ref(), data("s1.json").as_os_str(), "--x0".as_ref(), "1".as_ref()]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report = out.json();
    assert_eq!(report["status"], "Converged");
    assert!((report["p"][0].as_f64().unwrap() - 4.25).abs() <= 1e-8);
    assert_eq!(report["K"], serde_json::json!([[1.0]]));
    assert_eq!(report["L"], serde_json::json!([[1.0]]));
    assert!((report["optimal_cost"].as_f64().unwrap() - 4.25).abs() <= 1e-8);
}

#[test]
fn synth_divergent_exits_three() {
    let out = run(["synth".as_ref(), data("sd.json").as_os_str()]);
    assert_eq!(out.code, 3);
    assert_eq!(out.json()["status"], "Diverged");
}

#[test]
fn synth_iteration_budget_exits_three() {
    let out = run(["synth", data("s1.json").to_str().unwrap(), "--max-iter", "3"]);
    assert_eq!(out.code, 3);
    assert_eq!(out.json()["status"], "MaxIterationsReached");
}

#[test]
fn synth_s0_cost() {
    let out = run(["synth", data("s0.json").to_str().unwrap(), "--x0", "1"]);
    assert_eq!(out.code, 0);
    assert!((out.json()["optimal_cost"].as_f64().unwrap() - 2.0).abs() <= 1e-9);
}

#[test]
fn simulate_worst_case_telescopes() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("traj.csv");
    let out = run([
        "simulate",
        data("s1.json").to_str().unwrap(),
        "--horizon",
        "50",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report = out.json();
    assert!(report["telescoping_max_error"].as_f64().unwrap() <= 1e-9);
    assert!(report["telescoping_gap"].as_f64().unwrap().abs() <= 1e-7);

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,x_1,u_1,w_1,stage_cost");
    assert_eq!(lines.count(), 51);
}

#[test]
fn simulate_zero_policy_costs_no_more() {
    let out = run(["simulate", data("s1.json").to_str().unwrap(), "--horizon", "50", "--policy", "zero"]);
    assert_eq!(out.code, 0);
    let report = out.json();
    assert_eq!(report["bound_holds"], true);
    assert!(report["accumulated_cost"].as_f64().unwrap() <= report["initial_value"].as_f64().unwrap());
}

#[test]
fn simulate_rejects_empty_horizon() {
    let out = run(["simulate", data("s1.json").to_str().unwrap(), "--horizon", "0"]);
    assert_eq!(out.code, 2);
}

#[test]
fn random_policy_requires_seed() {
    let out = run(["simulate", data("s1.json").to_str().unwrap(), "--horizon", "5", "--policy", "random"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("--seed"));
}

#[test]
fn runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let mut reports = Vec::new();
    for i in 0..2 {
        let csv = dir.path().join(format!("run{i}.csv"));
        let out = run([
            "simulate",
            data("s1.json").to_str().unwrap(),
            "--horizon",
            "30",
            "--policy",
            "random",
            "--seed",
            "11",
            "--out",
            csv.to_str().unwrap(),
        ]);
        assert_eq!(out.code, 0);
        reports.push((out.stdout, std::fs::read(&csv).unwrap()));
    }
    assert_eq!(reports[0], reports[1]);

    let oracle: Vec<_> = (0..2)
        .map(|_| run(["oracle-check", data("s1.json").to_str().unwrap(), "--horizon", "3", "--seed", "5"]).stdout)
        .collect();
    assert_eq!(oracle[0], oracle[1]);
}

#[test]
fn oracle_check_passes_on_s1() {
    let out = run([
        "oracle-check",
        data("s1.json").to_str().unwrap(),
        "--horizon",
        "4",
        "--samples",
        "10",
        "--seed",
        "1",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report = out.json();
    assert_eq!(report["passed"], true);
    assert_eq!(report["samples"], 10);
}

#[test]
fn oracle_check_refuses_oversized_instances() {
    let dir = TempDir::new().unwrap();
    let n = 1;
    let m = 7;
    let l = 7;
    let zeros = |rows: usize, cols: usize| vec![vec![0.0; cols]; rows];
    let problem = serde_json::json!({
        "A": [[0.5]],
        "B": zeros(n, m),
        "F": zeros(n, l),
        "E": zeros(m, n),
        "G": zeros(l, n),
        "s": [1.0],
        "r": vec![0.0; m],
        "gamma": vec![0.0; l],
    });
    let path = write(&dir, "big.json", &problem.to_string());
    let out = run(["oracle-check", path.to_str().unwrap(), "--horizon", "1", "--seed", "1"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("12"), "{}", out.stderr);
}

#[test]
fn dcnet_reports_step_bound() {
    let out = run(["dcnet", data("path3.json").to_str().unwrap(), "--hmax"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let report = out.json();
    assert_eq!(report["h_max"], 0.5);
    assert_eq!(report["binding_bus"], 2);
}

#[test]
fn dcnet_output_composes_with_other_commands() {
    let dir = TempDir::new().unwrap();
    let problem = dir.path().join("net.json");
    let out = run([
        "dcnet",
        data("path3.json").to_str().unwrap(),
        "--design",
        data("path3_design.json").to_str().unwrap(),
        "--h",
        "0.1",
        "--out",
        problem.to_str().unwrap(),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(out.json()["feasible"], true);

    let p = problem.to_str().unwrap();
    assert_eq!(run(["validate", p]).code, 0);
    let synth = run(["synth", p]);
    assert_eq!(synth.code, 0, "{}", synth.stderr);
    let report = synth.json();
    assert_eq!(report["K_signs"], serde_json::json!([1, 1, 1]));
    for v in report["p"].as_array().unwrap() {
        assert!((v.as_f64().unwrap() - 20.0).abs() <= 1e-6);
    }
    assert_eq!(run(["simulate", p, "--horizon", "20"]).code, 0);
    assert_eq!(run(["oracle-check", p, "--horizon", "2", "--seed", "3", "--samples", "3"]).code, 0);
}

#[test]
fn dcnet_problem_goes_to_stdout_without_out() {
    let out = run([
        "dcnet",
        data("path3.json").to_str().unwrap(),
        "--design",
        data("path3_design.json").to_str().unwrap(),
        "--h",
        "0.1",
    ]);
    assert_eq!(out.code, 0);
    let problem = out.json();
    assert_eq!(problem["A"][1], serde_json::json!([0.1, 0.8, 0.1]));
    assert!(out.stderr.contains("feasible"));
}

#[test]
fn dcnet_structural_infeasibility_exits_one() {
    let dir = TempDir::new().unwrap();
    let design = write(
        &dir,
        "design.json",
        r#"{"E": [[0, 0, 0.1], [0, 0, 0], [0, 0, 0]], "s": [1, 1, 1]}"#,
    );
    let out = run([
        "dcnet",
        data("path3.json").to_str().unwrap(),
        "--design",
        design.to_str().unwrap(),
        "--hmax",
    ]);
    assert_eq!(out.code, 1);
    let entries = out.json()["structural_violations"].clone();
    assert_eq!(entries[0]["row"], 1);
    assert_eq!(entries[0]["col"], 3);
}

#[test]
fn dcnet_refuses_too_large_a_step() {
    let out = run([
        "dcnet",
        data("path3.json").to_str().unwrap(),
        "--design",
        data("path3_design.json").to_str().unwrap(),
        "--h",
        "0.6",
    ]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("\"feasible\": false"));
}
