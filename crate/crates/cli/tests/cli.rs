use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn navforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navforge"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_poses(path: &Path, rows: &[[f64; 3]]) {
    let mut s = String::from("frame_index,timestamp,x,y,z,phi_x,phi_y,phi_z\n");
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&format!(
            "{i},{},{},{},{},0,0,0\n",
            i as f64 * 0.1,
            r[0],
            r[1],
            r[2]
        ));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(navforge(&[]).status.code(), Some(2));
    assert_eq!(navforge(&["build-vpr", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        navforge(&["eval-ate", "--gt", "a.csv"]).status.code(),
        Some(2)
    );
    assert_eq!(navforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn threshold_violation_exits_1_naming_the_rule() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_string_lossy();
    let out = navforge(&[
        "build-vpr",
        "--tl-new",
        "100",
        "--ta-new",
        "90",
        "--tl-same",
        "50",
        "--ta-same",
        "20",
        "--in",
        &d,
        "--out",
        &d,
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("t_l_same < t_l_new/2"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);

    let out = navforge(&["build-vpr", "--ta-same", "45", "--in", &d, "--out", &d]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("t_a_same < t_a_new/2"));
}

#[test]
fn eval_ate_on_identical_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.csv");
    write_poses(
        &gt,
        &[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.5],
        ],
    );
    let json = dir.path().join("ate.json");
    let g = gt.to_string_lossy();
    let out = navforge(&[
        "eval-ate",
        "--gt",
        &g,
        "--est",
        &g,
        "--json",
        &json.to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("RMSE 0.000 m"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert!(report["rmse"].as_f64().unwrap() < 1e-9);
}

#[test]
fn eval_ate_degenerate_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.csv");
    write_poses(&gt, &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
    let g = gt.to_string_lossy();
    let out = navforge(&["eval-ate", "--gt", &g, "--est", &g]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: "));
}

#[test]
fn eval_retrieval_reports_recall() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.jsonl");
    let db = dir.path().join("db.jsonl");
    let gt = dir.path().join("gt.csv");
    fs::write(
        &q,
        "{\"id\":\"a\",\"vector\":[1,0]}\n{\"id\":\"b\",\"vector\":[0,1]}\n",
    )
    .unwrap();
    fs::write(
        &db,
        "{\"id\":\"x\",\"vector\":[1,0.1]}\n{\"id\":\"y\",\"vector\":[0.1,1]}\n",
    )
    .unwrap();
    fs::write(&gt, "query_id,db_id\na,x\nb,x\n").unwrap();
    let json = dir.path().join("r.json");
    let out = navforge(&[
        "eval-retrieval",
        "--queries",
        &q.to_string_lossy(),
        "--database",
        &db.to_string_lossy(),
        "--ground-truth",
        &gt.to_string_lossy(),
        "--ks",
        "1,2",
        "--json",
        &json.to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("recall@1: 0.5000"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(report["recall"], serde_json::json!([0.5, 1.0]));

    fs::write(&gt, "query_id,db_id\na,x\nb,zzz\n").unwrap();
    let out = navforge(&[
        "eval-retrieval",
        "--queries",
        &q.to_string_lossy(),
        "--database",
        &db.to_string_lossy(),
        "--ground-truth",
        &gt.to_string_lossy(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains('b'));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = navforge(&[
            "--seed",
            "9",
            "simulate",
            "--out",
            &d.path().to_string_lossy(),
            "--paths",
            "1",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert_eq!(stdout(&out).lines().count(), 5);
    }
    let rel = Path::new("path00/night_rain/trajectory.csv");
    assert_eq!(
        fs::read(a.path().join(rel)).unwrap(),
        fs::read(b.path().join(rel)).unwrap()
    );

    let c = tempfile::tempdir().unwrap();
    navforge(&[
        "--seed",
        "10",
        "simulate",
        "--out",
        &c.path().to_string_lossy(),
        "--paths",
        "1",
    ]);
    assert_ne!(
        fs::read(a.path().join(rel)).unwrap(),
        fs::read(c.path().join(rel)).unwrap()
    );
}

#[test]
fn serve_without_poses_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("empty.csv");
    write_poses(&traj, &[]);
    let out = navforge(&[
        "serve",
        "--trajectory",
        &traj.to_string_lossy(),
        "--bind",
        "127.0.0.1:0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("empty pose list"), "{}", stderr(&out));
}

#[test]
fn stats_on_empty_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out = navforge(&["stats", "--in", &dir.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("total"));
}
