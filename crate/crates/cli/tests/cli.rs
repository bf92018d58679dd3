use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softgrad"))
}

fn scene(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn softgrad")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Rows of a versioned CSV: (schema line, header, records).
fn read_csv(path: &Path) -> (String, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    let mut rdr = csv::Reader::from_reader(rest.as_bytes());
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (first.to_string(), header, rows)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn out(tmp: &TempDir, name: &str) -> PathBuf {
    tmp.path().join(name)
}

#[test]
fn simulate_writes_trajectory_forward_summary_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "run");
    let o = run(&["simulate", "--scene", &scene("tet_drop.json"), "--steps", "5", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (schema, header, rows) = read_csv(&dir.join("trajectory.csv"));
    assert_eq!(schema, "# softgrad trajectory v1");
    assert_eq!(header, ["step", "vid", "x", "y", "z"]);
    assert_eq!(rows.len(), 6 * 4);
    assert_eq!(rows.last().unwrap()[..2], ["5".to_string(), "3".to_string()]);
    let fwd: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("forward.json")).unwrap()).unwrap();
    assert_eq!(fwd["steps"].as_array().unwrap().len(), 5);
    assert!(fwd["steps"][0]["final_residual"].as_f64().unwrap() <= 1e-9);
    let m = manifest(&dir);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["timestamp"].as_str().is_some());
}

#[test]
fn zero_steps_keeps_only_the_initial_state() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "zero");
    let o = run(&["simulate", "--scene", &scene("block.json"), "--steps", "0", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, _, rows) = read_csv(&dir.join("trajectory.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "0");
}

#[test]
fn missing_scene_is_an_input_error_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nowhere/s.json");
    let o = run(&["simulate", "--scene", missing.to_str().unwrap(), "--out", out(&tmp, "x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn malformed_scene_and_bad_flags_are_input_errors() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"vertices": [[0,0,0]], "dt": 0.01}"#).unwrap();
    let o = run(&["simulate", "--scene", bad.to_str().unwrap(), "--out", out(&tmp, "a").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(&["gradcheck", "--scene", &scene("block.json"), "--var", "bogus", "--out", out(&tmp, "b").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let o = run(&["simulate", "--scene", &scene("block.json"), "--dt-override", "-1", "--out", out(&tmp, "c").to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn builtin_scenes_resolve_by_name() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "b");
    let o = run(&["simulate", "--scene", "bar", "--steps", "2", "--seed", "3", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(&dir);
    assert_eq!(m["scene_path"], "builtin:bar");
    assert_eq!(m["seed"], 3);
}

#[test]
fn reruns_are_byte_identical_and_hash_stable() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (out(&tmp, "a"), out(&tmp, "b"));
    for d in [&a, &b] {
        let o = run(&["simulate", "--scene", &scene("tet_drop.json"), "--steps", "20", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(std::fs::read(a.join("trajectory.csv")).unwrap(), std::fs::read(b.join("trajectory.csv")).unwrap());
    assert_eq!(manifest(&a)["config_hash"], manifest(&b)["config_hash"]);

    let c = out(&tmp, "c");
    run(&["simulate", "--scene", &scene("tet_drop.json"), "--steps", "20", "--eps2-override", "1e-5", "--out", c.to_str().unwrap()]);
    assert_ne!(manifest(&a)["config_hash"], manifest(&c)["config_hash"]);
}

#[test]
fn gradcheck_contact_free_stiffness_passes() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "gc");
    let o = run(&["gradcheck", "--scene", &scene("hanging_tet.json"), "--var", "stiffness,Eb,db_x", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (schema, header, rows) = read_csv(&dir.join("gradcheck.csv"));
    assert_eq!(schema, "# softgrad gradcheck v1");
    assert_eq!(header, ["var", "eta", "grad_ana", "grad_fd", "relerr", "friction_flag"]);
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert!(r[4].parse::<f64>().unwrap() <= 1e-3, "{r:?}");
        assert_eq!(r[5], "false");
    }
}

#[test]
fn friction_rows_are_flagged_and_not_gated() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "mu");
    // A zero tolerance would fail any gated row.
    let o = run(&["gradcheck", "--scene", &scene("block.json"), "--var", "mu", "--tol", "0", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, _, rows) = read_csv(&dir.join("gradcheck.csv"));
    assert_eq!(rows[0][0], "mu");
    assert_eq!(rows[0][5], "true");
}

#[test]
fn eta_sweep_emits_one_row_per_step_and_tolerance_gates() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "sweep");
    let o = run(&["gradcheck", "--scene", &scene("tet_drop.json"), "--var", "v0_x", "--eta", "1e-2,1e-4", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, _, rows) = read_csv(&dir.join("gradcheck.csv"));
    let etas: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(etas, ["1e-2", "1e-4"]);

    let o = run(&["gradcheck", "--scene", &scene("tet_drop.json"), "--var", "v0_x", "--tol", "0", "--out", out(&tmp, "strict").to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn identify_friction_from_table_settings() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "id");
    let o = run(&[
        "identify", "--scene", &scene("block.json"), "--var", "mu", "--init", "0.55", "--lr", "0.05", "--iters", "200",
        "--horizon", "50", "--fd-every", "10", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (schema, header, rows) = read_csv(&dir.join("trace.csv"));
    assert_eq!(schema, "# softgrad trace v1");
    assert_eq!(header, ["iter", "loss", "param_mu", "grad_ana_mu", "grad_fd_mu"]);
    assert_eq!(rows.len(), 201);
    let last: f64 = rows[200][2].parse().unwrap();
    assert!((last - 0.1).abs() <= 0.005, "μ = {last}");
    // FD references only on every tenth iterate
    assert!(!rows[10][4].is_empty() && rows[11][4].is_empty());
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert!(m["metrics"]["t50"].as_f64().is_some());
    assert_eq!(m["diverged"], false);
}

#[test]
fn joint_identification_has_two_parameter_columns() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "joint");
    let o = run(&[
        "identify", "--scene", &scene("tet_drop.json"), "--var", "E,nu", "--init", "8e4,0.28", "--iters", "3",
        "--lr", "1e-3", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, header, rows) = read_csv(&dir.join("trace.csv"));
    assert_eq!(header, ["iter", "loss", "param_E", "param_nu", "grad_ana_E", "grad_ana_nu", "grad_fd_E", "grad_fd_nu"]);
    assert_eq!(rows.len(), 4);
}

#[test]
fn divergence_exits_4_and_keeps_the_truncated_trace() {
    let tmp = TempDir::new().unwrap();
    let dir = out(&tmp, "div");
    let o = run(&[
        "identify", "--scene", &scene("tet_drop.json"), "--var", "nu", "--init", "0.3", "--target", "0.35", "--lr", "1e9",
        "--iters", "5", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let (_, _, rows) = read_csv(&dir.join("trace.csv"));
    assert_eq!(rows.len(), 1);
    assert!(dir.join("manifest.json").exists());
}

fn bench_rows(regime: &str, tmp: &TempDir) -> Vec<Vec<String>> {
    let dir = out(tmp, regime);
    let o = run(&["bench-solver", "--regime", regime, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (schema, header, rows) = read_csv(&dir.join("bench.csv"));
    assert_eq!(schema, "# softgrad bench v1");
    assert_eq!(header, ["solver", "precond", "iter", "relres", "wall_ms", "diverged"]);
    rows
}

/// Final iteration count of each (solver, precond) series.
fn final_iters(rows: &[Vec<String>]) -> Vec<(String, String, usize, bool)> {
    let mut out: Vec<(String, String, usize, bool)> = Vec::new();
    for r in rows {
        let key = (r[0].clone(), r[1].clone());
        let it: usize = r[2].parse().unwrap();
        match out.last_mut() {
            Some(last) if (last.0.clone(), last.1.clone()) == key => last.2 = it,
            _ => out.push((key.0, key.1, it, r[5] == "true")),
        }
    }
    out
}

#[test]
fn bench_contact_free_sparse_inverse_is_fastest_cg() {
    let tmp = TempDir::new().unwrap();
    let series = final_iters(&bench_rows("contact_free", &tmp));
    let cg: Vec<_> = series.iter().filter(|s| s.0 == "cg").collect();
    assert!(cg.len() >= 3);
    let best = cg.iter().min_by_key(|s| s.2).unwrap();
    assert_eq!(best.1, "sparse_inverse");
}

#[test]
fn bench_frictionless_marks_semi_implicit_diverged() {
    let tmp = TempDir::new().unwrap();
    let series = final_iters(&bench_rows("frictionless", &tmp));
    let semi = series.iter().find(|s| s.0 == "semi_implicit").unwrap();
    assert!(semi.3);
    assert!(series.iter().any(|s| s.0 == "cg" && s.1 == "woodbury" && !s.3));
}

#[test]
fn bench_frictional_runs_gmres_only() {
    let tmp = TempDir::new().unwrap();
    let series = final_iters(&bench_rows("frictional", &tmp));
    assert!(series.iter().all(|s| s.0 == "gmres" || s.0 == "semi_implicit"));
    assert_eq!(series.iter().filter(|s| s.0 == "gmres").count(), 4);
}
