use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mtd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtd"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn noiseless_round_trip_from_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // 20 x 20 at the default density holds a single copy
    ok(&mtd(
        d,
        &[
            "simulate", "--set", "size=20", "--set", "sigma=0", "--seed", "2", "--out", "m.mtd2",
        ],
    ));
    let meta = json(&d.join("m.mtd2.json"));
    assert_eq!(meta["achieved_p"], 1);
    assert_eq!(meta["config"]["size"], 20);
    assert!(meta["provenance"]["git"].is_string());

    ok(&mtd(
        d,
        &[
            "recover",
            "--in",
            "m.mtd2",
            "--set",
            "sigma=0.01",
            "--set",
            "init=truth",
            "--k",
            "8",
            "--eps",
            "1e-6",
            "--max-iters",
            "10",
            "--out",
            "est.json",
        ],
    ));
    let est = json(&d.join("est.json"));
    assert!(est["error"].as_f64().unwrap() < 1e-8, "{}", est["error"]);
    assert_eq!(est["config"]["k"], 8);
    let history = est["loglik_history"].as_array().unwrap();
    assert_eq!(
        history.len(),
        est["iterations"].as_u64().unwrap() as usize + 1
    );

    let out = mtd(
        d,
        &[
            "eval-error",
            "--truth",
            "m.mtd2.json",
            "--estimate",
            "est.json",
        ],
    );
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["error"].as_f64().unwrap() < 1e-8);
}

#[test]
fn recover_noisy_with_restarts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mtd(
        d,
        &[
            "simulate", "--set", "size=60", "--set", "snr=20", "--seed", "4", "--out", "m.mtd2",
        ],
    ));
    ok(&mtd(
        d,
        &[
            "recover",
            "--in",
            "m.mtd2",
            "--k",
            "4",
            "--max-iters",
            "3",
            "--restarts",
            "2",
            "--seed",
            "3",
            "--out",
            "e.json",
        ],
    ));
    let est = json(&d.join("e.json"));
    assert_eq!(est["restarts"].as_array().unwrap().len(), 2);
    assert_eq!(est["rho"].as_array().unwrap().len(), 100);
    assert!(est["error"].as_f64().unwrap() >= 0.0);
}

#[test]
fn corrupted_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&mtd(
        d,
        &["simulate", "--set", "size=30", "--out", "m.mtd2"],
    ));
    let mut bytes = fs::read(d.join("m.mtd2")).unwrap();
    bytes[0] = b'X';
    fs::write(d.join("bad.mtd2"), bytes).unwrap();
    let out = mtd(d, &["recover", "--in", "bad.mtd2", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!d.join("e.json").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = mtd(d, &["simulate", "--set", "snrr=2", "--out", "m.mtd2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("snrr"));
    let out = mtd(d, &["recover", "--out", "e.json"]);
    assert_eq!(out.status.code(), Some(2));
    // noiseless measurement with no noise level supplied
    ok(&mtd(
        d,
        &[
            "simulate", "--set", "size=30", "--set", "sigma=0", "--out", "z.mtd2",
        ],
    ));
    let out = mtd(d, &["recover", "--in", "z.mtd2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mtd(d, &["recover", "--in", "missing.mtd2"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("cfg.json"),
        r#"{"kind": "k", "grid": [4, 8, 16], "trials": 2, "size": 50, "max_iters": 2, "snr": 10}"#,
    )
    .unwrap();
    ok(&mtd(
        d,
        &[
            "sweep",
            "--config",
            "cfg.json",
            "--threads",
            "1",
            "--out",
            "k.csv",
        ],
    ));
    let text = fs::read_to_string(d.join("k.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "kind,sweep_value,trial,error,loglik,iterations,wall_seconds,seed"
    );
    assert_eq!(lines.count(), 3 * 2);
    let meta = json(&d.join("k.csv.json"));
    assert_eq!(meta["config"]["grid"], serde_json::json!([4.0, 8.0, 16.0]));

    ok(&mtd(d, &["summarize", "--in", "k.csv", "--out", "s.json"]));
    let s = json(&d.join("s.json"));
    let points = s["summary"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert_eq!(points[0]["trials"], 2);
    assert!(s["summary"]["wall_slope"].is_number());
}
