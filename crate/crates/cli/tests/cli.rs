use std::process::{Command, Output};

fn rrdps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrdps"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn analytic_published_session() {
    let dir = tempfile::tempdir().unwrap();
    let out = rrdps(&["analytic", "--published", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("n_th              4"), "{text}");
    assert!(text.contains("total rounds      103679400"));
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"schema_version\": 1"));
    let table = std::fs::read_to_string(dir.path().join("per_delay.csv")).unwrap();
    assert_eq!(table.lines().count(), 128);
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\npulses = 16\ntotal-loss-db = 12\ntotal-rounds = 5000\nseed = 1\n")
        .unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let o = rrdps(&[
            "montecarlo",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(out_a.join("summary.json")).unwrap();
    let b = std::fs::read(out_b.join("summary.json")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.contains("\"seed\": 9"));
    assert!(text.contains("\"pulses\": 16"));
}

#[test]
fn missing_seed_is_a_config_error() {
    let out = rrdps(&["montecarlo", "--total-rounds", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_values_are_config_errors() {
    assert_eq!(rrdps(&["analytic", "--mu", "abc"]).status.code(), Some(2));
    assert_eq!(
        rrdps(&["analytic", "--total-rounds", "1", "--locking-window-ms", "900"]).status.code(),
        Some(2)
    );
    assert_eq!(
        rrdps(&["analytic", "--config", "/nonexistent/run.cfg"]).status.code(),
        Some(2)
    );
}

#[test]
fn infeasible_error_rate_exits_3() {
    let out = rrdps(&["analytic", "--published", "--e-bit", "0.8"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn insecure_session_still_succeeds() {
    let out = rrdps(&["analytic", "--pulses", "2", "--total-rounds", "1000"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("INSECURE"));
}

#[test]
fn sweep_prints_a_table() {
    let out = rrdps(&["sweep", "--published", "--param", "e-bit", "--range", "0.05:0.15:3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("e-bit,"));
    assert!(lines[1].starts_with("0.05,"));
}

#[test]
fn calibrate_demo_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("cal.tsv");
    let out = rrdps(&[
        "calibrate-demo",
        "--pulses",
        "16",
        "--seconds",
        "20",
        "--visibility",
        "0.99",
        "--seed",
        "3",
        "--table-out",
        table.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("15/15"), "{}", stdout(&out));
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.lines().count() >= 15);
}
