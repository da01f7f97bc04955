use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn flexnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn spec(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../specs")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn plan_json(args: &[&str]) -> serde_json::Value {
    let mut all = vec!["plan", "--json"];
    all.extend_from_slice(args);
    let o = flexnet(&all);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn plan_at_the_capacity_boundary() {
    let v = plan_json(&["--spec", &spec("dag5.json"), "--lambda", "0.2608695"]);
    assert!((v["rho_star"].as_f64().unwrap() - 1.0).abs() < 1e-5);
}

#[test]
fn plan_boundary_along_direction() {
    let v = plan_json(&["--spec", &spec("xmodel.json"), "--direction", "1,1"]);
    assert!((v["boundary"].as_f64().unwrap() - 0.375).abs() < 1e-5);
    let v = plan_json(&["--spec", &spec("dag5-mode2.json"), "--direction", "1"]);
    assert!((v["boundary"].as_f64().unwrap() - 3.0 / 14.0).abs() < 1e-5);
}

#[test]
fn malformed_spec_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"kind\": \"dag\", \"classes\": [").unwrap();
    let o = flexnet(&["plan", "--spec", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse"));

    let o = flexnet(&["plan", "--spec", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_network_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cyclic = dir.path().join("cyclic.json");
    std::fs::write(
        &cyclic,
        r#"{"kind": "dag", "classes": [{"nodes": [1, 2], "edges": [[1, 2], [2, 1]], "lambda": 0.1}],
            "servers": [{"id": 1, "tasks": [1, 2]}], "mu": [0.5, 0.5]}"#,
    )
    .unwrap();
    let o = flexnet(&["plan", "--spec", cyclic.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cycle"));
}

#[test]
fn run_writes_csv_summary_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig4a");
    let o = flexnet(&[
        "run", "--preset", "fig4a", "--horizon", "5000", "--stride", "500", "--reps", "2", "--out",
        out.to_str().unwrap(), "--threads", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rep_002.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "slot,q0_1,q1_2,q1_3,q2_4,q3_4,q4_5,p1,p2,p3,p4,p5,nonempty_fraction"
    );
    assert_eq!(lines.count(), 11);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["replications"].as_array().unwrap().len(), 2);
    assert_eq!(summary["replications"][1]["seed"], 2);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(echo["policy"]["name"], "robust");
    assert_eq!(echo["policy"]["p0"].as_array().unwrap().len(), 5);
    assert!(echo["assumed"].as_array().unwrap().iter().any(|a| a.as_str().unwrap().starts_with("p0")));
}

#[test]
fn runs_are_reproducible_from_the_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("r{i}"));
        let o = flexnet(&[
            "run", "--spec", &spec("fig8.json"), "--policy", "robust-eps", "--horizon", "3000",
            "--seed", "9", "--out", out.to_str().unwrap(), "--threads", threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(out.join("rep_001.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn memory_guard_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = flexnet(&[
        "run", "--preset", "fig6", "--horizon", "100000", "--memory-cap", "500", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("unstable-suspect"));
}

#[test]
fn bad_run_parameters_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    for extra in [
        vec!["--preset", "fig4a", "--a", "0.4"],
        vec!["--preset", "fig4a", "--policy", "maxweight"],
        vec!["--preset", "nope"],
        vec!["--preset", "fig6", "--policy", "robust"],
        vec!["--spec", &spec("dag5.json"), "--batch", "1", "--horizon", "0"],
    ] {
        let mut args = vec!["run", "--out", d];
        args.extend(extra.iter());
        let o = flexnet(&args);
        assert_eq!(o.status.code(), Some(2), "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn project_reads_stdin() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_flexnet"))
        .args(["project", "--spec", &spec("fig2a.json")])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"0.5, 0.5, 0.5, 0.5\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for p in v["point"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 0.25).abs() < 1e-9);
    }
}

#[test]
fn verify_filter_and_mutation() {
    let o = flexnet(&["verify", "--only", "projection"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("projection") && text.contains("PASS"));
    assert!(!text.contains("estimator"));

    let o = flexnet(&["verify", "--only", "convergence", "--inject-sign-error", "--horizon", "50000"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));

    let o = flexnet(&["verify", "--only", "everything"]);
    assert_eq!(o.status.code(), Some(2));
}
