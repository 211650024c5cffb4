use mobjam::agents::{QTable, StateSpace};
use mobjam::env::GameVariant;
use mobjam::harness::{export, read_report, run_experiment, AgentKind, ExperimentConfig, ExportFormat};

fn short_run(variant: GameVariant, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(variant, 1, 20_000, seed).unwrap();
    cfg.ma_window = 500;
    cfg
}

#[test]
fn series_lengths_and_normalization() {
    for variant in [GameVariant::Sequential, GameVariant::Simultaneous, GameVariant::Blind] {
        let cfg = short_run(variant, 3);
        let m = run_experiment(&cfg).unwrap();
        assert_eq!(m.rewards.len(), 20_000);
        assert_eq!(m.trace.len(), 20_000);
        assert_eq!(m.occupancy.len(), 81);
        assert!((m.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let cap = (40.0f64 / 10.0).powi(2);
        assert!(m.rewards.iter().all(|&r| (0.0..=cap).contains(&r)));
    }
}

#[test]
fn tabular_values_stay_bounded() {
    let cfg = ExperimentConfig::new(GameVariant::Sequential, 2, 200_000, 5).unwrap();
    let m = run_experiment(&cfg).unwrap();
    let cap = 16.0 / (1.0 - cfg.learning_r.discount);
    let (lo, hi) = m.q_r.as_ref().unwrap().min_max();
    assert!(lo >= 0.0 && hi <= cap, "R range [{lo}, {hi}]");
    let (lo, hi) = m.q_j.as_ref().unwrap().min_max();
    assert!(lo >= -cap && hi <= 0.0, "J range [{lo}, {hi}]");
}

#[test]
fn same_seed_same_run_different_seed_different_run() {
    let a = run_experiment(&short_run(GameVariant::Simultaneous, 11)).unwrap();
    let b = run_experiment(&short_run(GameVariant::Simultaneous, 11)).unwrap();
    let c = run_experiment(&short_run(GameVariant::Simultaneous, 12)).unwrap();
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.trace, b.trace);
    assert_ne!(a.trace, c.trace);
}

#[test]
fn csv_and_json_exports() {
    let mut cfg = short_run(GameVariant::Blind, 2);
    cfg.agent_j = AgentKind::Mixed;
    let m = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(&m, &cfg, ExportFormat::Csv, dir.path()).unwrap();
    let written = export(&m, &cfg, ExportFormat::Json, dir.path()).unwrap();
    assert_eq!(written.len(), 1);

    let occupancy = std::fs::read_to_string(dir.path().join("occupancy.csv")).unwrap();
    let lines: Vec<&str> = occupancy.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[0].starts_with("x_idx,y0"));
    assert!(lines.iter().all(|l| l.split(',').count() == 10));

    let rewards = std::fs::read_to_string(dir.path().join("rewards.csv")).unwrap();
    assert_eq!(rewards.lines().count(), 20_001);

    let report = read_report(&written[0]).unwrap();
    assert_eq!(report.config, cfg);
    assert_eq!(report.summary, m.summary(cfg.ma_window).unwrap());
    assert!(report.files.iter().any(|f| f == "occupancy.csv"));
}

#[test]
fn export_to_missing_directory_names_the_path() {
    let cfg = short_run(GameVariant::Sequential, 1);
    let m = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("a").join("b");
    let file = dir.path().join("plain");
    std::fs::write(&file, "x").unwrap();
    let err = export(&m, &cfg, ExportFormat::Csv, file.join("sub")).unwrap_err();
    assert!(err.to_string().contains("plain"), "{err}");
    // nested directories are created on demand
    export(&m, &cfg, ExportFormat::Csv, &missing).unwrap();
    assert!(missing.join("trace.csv").exists());
}

#[test]
fn saved_q_tables_reload() {
    let cfg = short_run(GameVariant::Blind, 4);
    let m = run_experiment(&cfg).unwrap();
    let q = m.q_r.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.txt");
    q.save(&path).unwrap();
    let back = QTable::load(cfg.grid, StateSpace::OwnOnly, &path).unwrap();
    assert_eq!(back, q);
}
