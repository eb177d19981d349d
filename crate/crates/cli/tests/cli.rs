use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qutrit-qsi")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s}"))
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn map_two_steps() {
    let o = run(&["map", "2,0", "1,0", "--iters", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv(&stdout(&o));
    assert_eq!(rows[0], ["n", "re_f1", "im_f1", "re_f2", "im_f2", "step_survival", "cumulative_survival"]);
    assert_eq!(rows.len(), 4);
    let last = &rows[3];
    assert_eq!(num(&last[1]), 32.0);
    assert_eq!(num(&last[3]), 0.0625);
    let expected = (69.0 / 1296.0) * num(&rows[3][5]);
    assert!((num(&last[6]) - expected).abs() < 1e-15);
    assert!(stderr(&o).contains("\"subcommand\":\"map\""));
}

#[test]
fn map_zero_iterations_single_row() {
    let o = run(&["map", "0.3@1", "1.2,-0.5", "--iters", "0"]);
    assert!(o.status.success());
    let rows = csv(&stdout(&o));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][6], "1");
}

#[test]
fn map_zero_coefficient_exits_2() {
    let o = run(&["map", "1,0", "0,0", "--iters", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("step 1"), "{}", stderr(&o));
}

#[test]
fn map_rejects_bad_literal() {
    let o = run(&["map", "1,x", "1,0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn heatmap_survival_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = run(&[
        "heatmap", "--quantity", "survival", "--iters", "1", "--range", "0,2,0,2",
        "--resolution", "3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv(&fs::read_to_string(&out).unwrap());
    assert_eq!(rows[0][2], "1");
    assert_eq!(rows[2][0], "1");
    assert!((num(&rows[2][2]) - 1.0 / 27.0).abs() < 1e-15);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "heatmap");
    assert_eq!(manifest["full_config"]["resolution"], 3);
    assert!(manifest["timestamp"].is_string());
}

#[test]
fn heatmap_diagonal_and_rotated_row() {
    let o = run(&["heatmap", "--range", "0.5,1.5,0.5,1.5", "--resolution", "5", "--iters", "2"]);
    let rows = csv(&stdout(&o));
    for (i, row) in rows.iter().enumerate().skip(1) {
        let x = num(&row[0]);
        let want = x * x / (1.0 + 2.0 * x * x);
        assert!((num(&row[i]) - want).abs() < 1e-12);
    }
    // φ = 0 lies on the middle row of a symmetric φ range
    let o = run(&["heatmap", "--mode", "rotated", "--range", "0.5,2,-1,1", "--resolution", "5", "--iters", "3"]);
    let rows = csv(&stdout(&o));
    assert_eq!(num(&rows[3][0]), 0.0);
    for (rho, cell) in rows[0][1..].iter().zip(&rows[3][1..]) {
        let r = num(rho);
        assert!((num(cell) - r * r / (1.0 + 2.0 * r * r)).abs() < 1e-12, "{cell}");
    }
}

#[test]
fn heatmap_invalid_range_exits_2() {
    let o = run(&["heatmap", "--range", "2,0,0,2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["heatmap", "--range", "0,1,2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn heatmap_is_reproducible_across_threads() {
    let args = ["heatmap", "--mode", "rotated", "--resolution", "17", "--iters", "2"];
    let a = run(&[&args[..], &["--threads", "1"]].concat());
    let b = run(&[&args[..], &["--threads", "4"]].concat());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn identify_two_states() {
    let dir = tempfile::tempdir().unwrap();
    let set = write(dir.path(), "s.txt", "# pair\n2,0 1,0\n1@0 2@0.5\n");
    let o = run(&["identify", "--set", &set, "--hidden", "1", "--iters", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("identified index 1, loops 1\n"), "{}", stdout(&o));
}

#[test]
fn identify_expected_m0_is_one_over_k() {
    let dir = tempfile::tempdir().unwrap();
    let set = write(dir.path(), "s.txt", "1,0 2,0\n2,0 1,0\n1,0 3,0\n3,0 1,0\n");
    for hidden in ["1", "3"] {
        let o = run(&["identify", "--set", &set, "--hidden", hidden, "--iters", "0", "--mode", "expected"]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("success probability: 0.25\n"), "{}", stdout(&o));
    }
}

#[test]
fn identify_jsonl_record_with_transcript() {
    let dir = tempfile::tempdir().unwrap();
    let set = write(dir.path(), "s.txt", "1,0 2,0\n2,0 4,0\n0.7,0.2 1,0\n");
    let out = dir.path().join("r.jsonl");
    let o = run(&[
        "identify", "--set", &set, "--hidden", "2", "--iters", "3", "--mode", "sampled", "--seed", "11",
        "--format", "jsonl", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    let loops = rec["loops"].as_u64().unwrap();
    assert_eq!(rec["transcript"].as_array().unwrap().len() as u64, loops);
    assert_eq!(rec["hidden_index"], 2);
    assert!(out.with_extension("jsonl.manifest.json").exists());
}

#[test]
fn identify_malformed_file_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let set = write(dir.path(), "bad.txt", "1,0 2,0\n# fine\n2,0\n");
    let o = run(&["identify", "--set", &set, "--hidden", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = run(&["identify", "--set", "/nonexistent/set.txt", "--hidden", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identify_bad_hidden_exits_2_and_algorithm_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let set = write(dir.path(), "s.txt", "1,0 2,0\n2,0 1,0\n");
    let o = run(&["identify", "--set", &set, "--hidden", "5"]);
    assert_eq!(o.status.code(), Some(2));
    // equal magnitudes with orthogonal phases cannot be moved off the boundary
    let set = write(dir.path(), "t.txt", "1,0 1,0\n1,1 1,-1\n");
    let o = run(&["identify", "--set", &set, "--hidden", "2"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn campaign_k2_ideal_is_exact() {
    let o = run(&["campaign", "--k", "2", "--trials", "300", "--mode", "ideal", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv(&stdout(&o));
    let h = &rows[0];
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    assert!(h.contains(&"failures".to_string()));
    assert_eq!(rows[1][col("mean_loops")], "1");
    assert_eq!(rows[1][col("std_loops")], "0");
    assert_eq!(rows[1][col("success_rate")], "1");
    assert_eq!(rows[1][col("failures")], "0");
}

#[test]
fn campaign_sweep_rows_and_reproducibility() {
    let args = ["campaign", "--k", "2,3", "--trials", "400", "--mode", "sampled", "--sweep-m", "0..2", "--seed", "9"];
    let a = run(&[&args[..], &["--threads", "1"]].concat());
    let b = run(&[&args[..], &["--threads", "3"]].concat());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let rows = csv(&stdout(&a));
    assert_eq!(rows.len(), 7);
    // a sweep row is reproduced by a single run with its printed seed
    let seed = &rows[2][3];
    let single = run(&["campaign", "--k", "2", "--iters", "1", "--trials", "400", "--mode", "sampled", "--seed", seed]);
    assert_eq!(csv(&stdout(&single))[1], rows[2]);
}

#[test]
fn campaign_invalid_config_exits_2() {
    assert_eq!(run(&["campaign", "--k", "1", "--trials", "10"]).status.code(), Some(2));
    assert_eq!(run(&["campaign", "--k", "2", "--sweep-m", "3..1"]).status.code(), Some(2));
    assert_eq!(run(&["campaign", "--k", "2", "--rho-range", "2,1"]).status.code(), Some(2));
}

#[test]
fn resources_two_steps() {
    let o = run(&["resources", "1,0", "1,0", "--iters", "2", "--format", "jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let y = v["estimate"]["expected_yield_fraction"].as_f64().unwrap();
    let want = (1.0f64 / 27.0).powi(2) / 16.0;
    assert!((y - want).abs() < 1e-18, "{y} vs {want}");
    assert!(v["simulation"].is_null());
}

#[test]
fn resources_m0_needs_one_copy() {
    let o = run(&["resources", "1,0", "2,0", "--iters", "0"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("required size: 1\n"), "{}", stdout(&o));
}

#[test]
fn resources_simulation_within_three_sigma() {
    let o = run(&["resources", "1,0", "1,0", "--iters", "2", "--simulate", "1000000", "--seed", "4", "--format", "jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(v["simulation"]["z_score"].as_f64().unwrap().abs() <= 3.0);
    assert!(stderr(&o).contains("\"seed\":4"));
}

#[test]
fn resources_undefined_trajectory_exits_2() {
    let o = run(&["resources", "1,0", "0,0", "--iters", "2"]);
    assert_eq!(o.status.code(), Some(2));
}
