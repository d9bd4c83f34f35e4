use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn btl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btl")).args(args).output().unwrap()
}

fn btl_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btl")).args(args).env(key, value).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn constants_json_has_the_dimensional_constants() {
    let o = btl(&["constants", "--n", "4", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let c1 = v["c1"].as_f64().unwrap();
    assert!((c1 - 26.3189).abs() < 1e-4, "{c1}");
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        ["alpha_n", "ball_volume", "bubble_mass", "c1", "c2", "c3", "c4", "gamma_n", "n", "sphere_measure"]
    );
}

#[test]
fn critical_point_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cp.json");
    let o = btl(&[
        "critical-point",
        "--n",
        "4",
        "--k",
        "3",
        "--a0",
        "1",
        "--grad-a",
        "1,0,0,0",
        "--out",
        out.to_str().unwrap(),
        "--assert",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = read_json(&out);
    assert_eq!(v["schema"], 1);
    assert_eq!(v["command"], "critical-point");
    assert_eq!(v["config"]["seed"], 0);
    let sigma: Vec<Vec<f64>> = serde_json::from_value(v["result"]["sigma0"].clone()).unwrap();
    assert_eq!(sigma, vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4], vec![0.0; 4]]);
    assert!(v["result"]["critical"]["determinant"].as_f64().unwrap() != 0.0);
    assert_eq!(v["result"]["reduced_determinant"]["numerator"], "-7");
    assert_eq!(v["provenance"]["sigma0"], "closed_form");
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn shoot_grid_writes_csv_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("shoot.csv");
    let o =
        btl(&["shoot", "--n", "4", "--k", "1", "--eps-grid", "0.05,0.02,0.01,0.005", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "eps,s,layer_delta_1,boundary_residual,energy");
    assert_eq!(lines.len(), 6);
    let summary: Value = serde_json::from_str(lines[5].strip_prefix("# summary ").unwrap()).unwrap();
    let fitted = summary["fits"][0]["fitted"].as_f64().unwrap();
    assert!((fitted - 2.0 / 3.0).abs() <= 0.15, "{fitted}");
    assert!(summary["caveat"].as_str().unwrap().contains("cross-check"));
}

#[test]
fn shoot_node_radii_columns_follow_the_layer_count() {
    let o = btl(&["shoot", "--n", "4", "--k", "3", "--eps", "0.05", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "eps,s,node_radius_1,node_radius_2,layer_delta_1,layer_delta_2,layer_delta_3,boundary_residual,energy"
    );
    assert_eq!(lines.next().unwrap().split(',').count(), 9);
}

#[test]
fn malformed_toml_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "command = \"shoot\"\nn = 4\nk = [1\n").unwrap();
    let o = btl(&["report", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    std::fs::write(&cfg, "command = \"expansion\"\nn = 4\n").unwrap();
    let o = btl(&["report", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("field `k`"), "{}", stderr(&o));

    std::fs::write(&cfg, "command = \"shoot\"\nn = 4\nsteps = 3\n").unwrap();
    let o = btl(&["report", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown field `steps`"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_with_one() {
    assert_eq!(btl(&["constants", "--n", "2", "--json"]).status.code(), Some(1));
    assert_eq!(btl(&["expansion", "--n", "4", "--k", "1", "--weight", "quadratic"]).status.code(), Some(1));
    assert_eq!(btl(&["shoot", "--n", "4", "--k", "0", "--eps", "0.05"]).status.code(), Some(1));
    assert_eq!(btl(&["bogus"]).status.code(), Some(1));
}

#[test]
fn report_config_matches_direct_invocation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cp.toml");
    let out = dir.path().join("cp.json");
    std::fs::write(
        &cfg,
        "command = \"critical-point\"\nn = 4\nk = 2\na0 = 1.0\ngrad_a = [0.0, 2.0, 0.0, 0.0]\nseed = 3\n",
    )
    .unwrap();
    let o = btl(&["report", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = read_json(&out);
    assert_eq!(v["config"]["seed"], 3);
    assert_eq!(v["result"]["sigma0"][0], serde_json::json!([0.0, 1.0, 0.0, 0.0]));
}

#[test]
fn failed_checks_exit_with_three_only_under_assert() {
    // Far from the asymptotic regime the expansion checks fail.
    let args = ["expansion", "--n", "4", "--k", "1", "--weight", "affine:0.5,0,0,0", "--eps-grid", "0.3,0.2,0.1,0.05"];
    let plain = btl(&args);
    assert_eq!(plain.status.code(), Some(0), "{}", stderr(&plain));
    assert!(stdout(&plain).contains("FAIL"));
    let mut strict = args.to_vec();
    strict.push("--assert");
    assert_eq!(btl(&strict).status.code(), Some(3));
}

#[test]
fn failed_points_exit_with_two() {
    // At the coarsest eps the outer bubble centre leaves the ball.
    let o = btl(&[
        "expansion",
        "--n",
        "4",
        "--k",
        "2",
        "--weight",
        "affine:0.5,0,0,0",
        "--eps-grid",
        "0.0316,1e-6,1e-7,1e-8",
        "--rel-tol",
        "1e-6",
        "--abs-tol",
        "1e-12",
        "--assert",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("excluded eps: [0.0316]"));
}

#[test]
fn thread_count_does_not_change_the_report() {
    let args = ["shoot", "--n", "4", "--k", "2", "--eps-grid", "0.05,0.03,0.02,0.01", "--json"];
    let one = btl_env(&args, "BTL_THREADS", "1");
    let four = btl_env(&args, "BTL_THREADS", "4");
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(btl_env(&args, "BTL_THREADS", "zero").status.code(), Some(1));
}

#[test]
fn lemma_check_reports_the_matched_form() {
    let o = btl(&[
        "lemma-check",
        "--item",
        "iii",
        "--n",
        "4",
        "--k",
        "3",
        "--eps",
        "1e-6",
        "--l",
        "2",
        "--i",
        "1",
        "--d",
        "1,2,0.5",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["checks"][0]["matched_form"], "d_l/d_(l-1)");
    assert_eq!(v["provenance"]["checks"], "quadrature");
}

#[test]
fn project_reads_a_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("pts.csv");
    std::fs::write(&grid, "x1,x2,x3,x4\n0.5,0,0,0\n# comment\n0,0.2,0.1,0\n").unwrap();
    let o = btl(&[
        "project",
        "--n",
        "4",
        "--eps",
        "0.001",
        "--delta",
        "0.05",
        "--grid-file",
        grid.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("x1,x2,x3,x4,U,PU,defect\n"));

    std::fs::write(&grid, "0.5,0,0\n").unwrap();
    let o = btl(&["project", "--n", "4", "--eps", "0.001", "--delta", "0.05", "--grid-file", grid.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}
