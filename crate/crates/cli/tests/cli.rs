use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddctl::design;
use ddctl::hankel::HankelBlock;
use ddctl::io::read_trajectory;
use ddctl::lti_sim::{self, PendulumParams};
use ddctl::Config;
use nalgebra::DMatrix;
use serde_json::Value;

fn ddctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let path = dir.join(name);
    let mut args = vec!["simulate"];
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", path_str(&path)]);
    let out = ddctl(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn design_report(input: &Path, method: &str, extra: &[&str]) -> (i32, Value) {
    let mut args = vec!["design", method, "--in", path_str(input)];
    args.extend_from_slice(extra);
    let out = ddctl(&args);
    let v = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (code(&out), v)
}

fn matrix(v: &Value) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).unwrap();
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

#[test]
fn reactor_experiment_has_sixteen_state_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(
        dir.path(),
        "r.csv",
        &["--bench", "batch_reactor", "--T", "15", "--seed", "7"],
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 16);
    assert!(dir.path().join("r.meta.json").exists());
    let (traj, meta) = read_trajectory(&csv).unwrap();
    assert_eq!(traj.steps(), 15);
    assert_eq!(traj.states.unwrap().len(), 16);
    assert_eq!(meta.unwrap().bench.as_deref(), Some("batch_reactor"));
}

#[test]
fn pendulum_experiment_matches_library_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(
        dir.path(),
        "p.csv",
        &["--bench", "pendulum", "--T", "5", "--amp", "0.1", "--seed", "3"],
    );
    let (traj, _) = read_trajectory(&csv).unwrap();
    assert!(traj.inputs.iter().all(|u| u.amax() <= 0.1));
    assert!(traj.states.as_ref().unwrap()[0].amax() <= 0.1);
    let d = traj.remainder.as_ref().expect("remainder column present");
    assert_eq!(d.len(), 5);
    let again = lti_sim::simulate_pendulum(
        &PendulumParams::default(),
        &traj.states.as_ref().unwrap()[0],
        &traj.inputs,
    )
    .unwrap();
    assert_eq!(again.states, traj.states);
    assert_eq!(again.remainder, traj.remainder);
}

#[test]
fn io_experiment_has_pre_window() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(
        dir.path(),
        "c.csv",
        &["--bench", "two_cart_io", "--T", "9", "--seed", "1"],
    );
    let ks: Vec<i64> = std::fs::read_to_string(&csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ks, (-4..=8).collect::<Vec<_>>());
}

#[test]
fn lqr_report_carries_riccati_gap() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "r.csv", &["--bench", "batch_reactor", "--seed", "2"]);
    let (c, v) = design_report(&csv, "lqr", &["--Qx", "identity", "--R", "identity"]);
    assert_eq!(c, 0);
    assert_eq!(v["schema"], "ddctl-report-1");
    let gap = v["extra"]["dare_gap"].as_f64().unwrap();
    assert!(gap <= 1e-5, "{gap}");
}

#[test]
fn robust_report_has_positive_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(
        dir.path(),
        "n.csv",
        &["--bench", "batch_reactor", "--seed", "4", "--noise", "0.01"],
    );
    let (c, v) = design_report(&csv, "robust", &["--maximize-alpha"]);
    assert_eq!(c, 0);
    assert!(v["report"]["alpha"].as_f64().unwrap() > 0.0);
    assert!(v["config"]["maximize_alpha"].as_bool().unwrap());
}

#[test]
fn output_feedback_report_has_eight_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(
        dir.path(),
        "c.csv",
        &["--bench", "two_cart_io", "--T", "9", "--seed", "1"],
    );
    let (c, v) = design_report(&csv, "output-feedback", &["--n", "4"]);
    assert_eq!(c, 0);
    assert_eq!(matrix(&v["report"]["K"]).shape(), (1, 8));
    assert_eq!(matrix(&v["extra"]["realization"]["A_c"]).shape(), (4, 4));
    assert!(v["extra"]["rho_oracle"].as_f64().unwrap() < 1.0);
}

#[test]
fn nonlinear_and_continuous_designs_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "p.csv", &["--bench", "pendulum", "--seed", "1"]);
    let (c, v) = design_report(&csv, "nonlinear", &[]);
    assert_eq!(c, 0);
    assert!(v["report"]["rho_oracle"].as_f64().unwrap() < 1.0);
    let csv = simulate(dir.path(), "d.csv", &["--bench", "double_integrator", "--seed", "1"]);
    let (c, v) = design_report(&csv, "state-feedback-ct", &[]);
    assert_eq!(c, 0);
    assert!(v["report"]["abscissa_oracle"].as_f64().unwrap() < 0.0);
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", &["--bench", "batch_reactor", "--seed", "11"]);
    let b = simulate(dir.path(), "b.csv", &["--bench", "batch_reactor", "--seed", "11"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let mut reports = Vec::new();
    for name in ["one.json", "two.json"] {
        let out = dir.path().join(name);
        let res = ddctl(&[
            "design",
            "state-feedback",
            "--in",
            path_str(&a),
            "--out",
            path_str(&out),
        ]);
        assert_eq!(code(&res), 0);
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timestamp");
        reports.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn file_round_trip_reproduces_in_memory_design() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "r.csv", &["--bench", "batch_reactor", "--seed", "5"]);
    let (traj, _) = read_trajectory(&csv).unwrap();
    let h = HankelBlock::from_trajectory(&traj).unwrap();
    let direct = design::stabilize_dt(&h, &Config::default()).unwrap();
    let (c, v) = design_report(&csv, "state-feedback", &[]);
    assert_eq!(c, 0);
    assert_eq!(matrix(&v["report"]["K"]), direct.gain.unwrap());
}

#[test]
fn config_file_and_flags_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "r.csv", &["--bench", "batch_reactor", "--seed", "5"]);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"rank_tol": 1e-11, "solver": {"max_iter": 150}}"#).unwrap();
    let (c, v) = design_report(
        &csv,
        "state-feedback",
        &["--config", path_str(&cfg), "--lmi-margin", "1e-7"],
    );
    assert_eq!(c, 0);
    assert_eq!(v["config"]["rank_tol"].as_f64(), Some(1e-11));
    assert_eq!(v["config"]["lmi_margin"].as_f64(), Some(1e-7));
    assert_eq!(v["config"]["solver"]["max_iter"].as_u64(), Some(150));
    std::fs::write(&cfg, r#"{"margin": 1}"#).unwrap();
    assert_eq!(
        design_report(&csv, "state-feedback", &["--config", path_str(&cfg)]).0,
        2
    );
}

#[test]
fn exit_codes_follow_the_design_status() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "r.csv", &["--bench", "batch_reactor", "--seed", "7"]);
    let (c, v) = design_report(&csv, "state-feedback", &["--lmi-margin", "1e3"]);
    assert_eq!((c, v["report"]["status"].as_str()), (3, Some("infeasible")));
    let (c, v) = design_report(&csv, "state-feedback", &["--max-iter", "1"]);
    assert_eq!((c, v["report"]["status"].as_str()), (4, Some("numerical_failure")));
    // noise far beyond what the data can absorb: the data-side check passes, the true plant is unstable
    let noisy = simulate(
        dir.path(),
        "n.csv",
        &["--bench", "batch_reactor", "--seed", "0", "--noise", "0.2"],
    );
    let (c, v) = design_report(&noisy, "robust", &[]);
    assert_eq!(c, 5);
    assert!(v["report"]["rho_oracle"].as_f64().unwrap() >= 1.0);
    assert_eq!(code(&ddctl(&["simulate", "--bench", "nope", "--out", "x.csv"])), 2);
    assert_eq!(code(&ddctl(&["design", "bogus", "--in", path_str(&csv)])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&ddctl(&["design", "lqr", "--in", path_str(&missing)])), 1);
}

#[test]
fn bench_writes_summary_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let res = ddctl(&[
        "bench",
        "reactor-stab",
        "--seeds",
        "5",
        "--horizon",
        "30",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&res), 0);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seeds"], 5);
    assert!(summary["success_rate"].as_f64().unwrap() >= 0.8);
    let seeds: Vec<u64> = summary["outcomes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["seed"].as_u64().unwrap())
        .collect();
    assert_eq!(seeds, vec![0, 1, 2, 3, 4]);
    let norms = std::fs::read_to_string(out.join("norms_seed_0.csv")).unwrap();
    assert!(norms.starts_with("k,norm_x\n"));
    assert_eq!(norms.lines().count(), 1 + 31);
    assert_eq!(code(&ddctl(&["bench", "unknown-example"])), 2);
}
