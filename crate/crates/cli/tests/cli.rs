use std::path::Path;
use std::process::{Command, Output};

fn mobjam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mobjam")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.split_once(" = ").filter(|(k, _)| *k == key).map(|(_, v)| v.to_string()))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
}

#[test]
fn static_solve_prints_the_closed_form() {
    let o = mobjam(&["static-solve", "--l", "10", "--m", "50", "--alpha", "2"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let j: f64 = field(&text, "jammer_pos").parse().unwrap();
    assert!((j - 50.0 / 3.0).abs() < 1e-12);
    assert_eq!(field(&text, "stackelberg_leader_r_pure"), "0");
}

#[test]
fn oracle_tables_are_square() {
    let dir = tempfile::tempdir().unwrap();
    let o = mobjam(&["oracle", "--game", "g2", "--n-positions", "5", "--average-steps", "1000", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(dir.path().join("g2_values.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.split(',').count() == 5));

    let o = mobjam(&["oracle", "--game", "static"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 9);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    std::fs::write(&cfg, "# short blind run\ngame = g3\nsteps = 5000\nseed = 1\nmax_step = 2\n").unwrap();
    let out = dir.path().join("out");
    let o = mobjam(&["simulate", "--config", cfg.to_str().unwrap(), "--steps", "4000", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(field(&stdout(&o), "steps"), "4000");
    assert_eq!(field(&stdout(&o), "game"), "g3");
    let echoed = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert_eq!(field(&echoed, "max_step"), "2");
    assert_eq!(field(&echoed, "steps"), "4000");
    for f in ["rewards.csv", "trace.csv", "occupancy.csv", "run.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn q_tables_save_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q");
    let qs = q.to_str().unwrap();
    let o = mobjam(&["simulate", "--game", "g2", "--steps", "3000", "--save-qtable", qs]);
    assert!(o.status.success());
    assert!(Path::new(qs).join("q_r.txt").exists());
    let o = mobjam(&["simulate", "--game", "g2", "--steps", "1000", "--load-qtable", qs]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // a table for a different state space is rejected
    let o = mobjam(&["simulate", "--game", "g3", "--steps", "1000", "--load-qtable", qs]);
    assert!(!o.status.success());
}

#[test]
fn train_deep_writes_networks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mobjam(&["train-deep", "--steps", "2000", "--hidden", "8,8", "--batch", "8", "--replay", "500", "--sync", "100", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(field(&stdout(&o), "agent_r"), "deep");
    assert!(dir.path().join("net_r.txt").exists());
    let o = mobjam(&["train-deep", "--steps", "500", "--hidden", "8,8", "--batch", "8", "--load-net", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_input_exits_nonzero() {
    for args in [
        vec!["simulate", "--agent-r", "greedy", "--steps", "10"],
        vec!["simulate", "--game", "g7"],
        vec!["simulate", "--config", "/nonexistent/mobjam.txt"],
        vec!["oracle", "--game", "g3"],
        vec!["static-solve", "--l", "60", "--m", "50"],
        vec!["gain-experiment", "--runs", "0"],
    ] {
        let o = mobjam(&args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn gain_experiment_reports_one_row_per_alpha() {
    let o = mobjam(&["gain-experiment", "--runs", "1", "--steps", "5000", "--alphas", "2,3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("alpha,strategic_se,random_se,ratio"));
}
