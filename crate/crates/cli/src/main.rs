use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mobjam::agents::{QTable, StateSpace};
use mobjam::channel::ScenarioConfig;
use mobjam::deep::DuelingNet;
use mobjam::env::{GameVariant, GridSpec};
use mobjam::harness::{
    export, run_experiment_warm, strategic_gain_experiment, AgentKind, ExperimentConfig, ExportFormat, GainConfig,
    RunMetrics, WarmStart,
};
use mobjam::kv::KeyValues;
use mobjam::oracle::{
    alternating_average_reward, alternating_minimax_vi, fictitious_play, shapley_vi, simultaneous_average_reward,
    solve_matrix_game, table_csv, PayoffMatrix, StageSolver, DEFAULT_FP_ITERS, DEFAULT_VI_TOL,
};
use mobjam::rng::{stream_rng, Stream};
use mobjam::static_game::{nash_noiseless, nash_with_noise, stackelberg, DEFAULT_GRID_N};
use mobjam::Player;

#[derive(Parser)]
#[command(name = "mobjam", version, about = "Mobile jamming games: equilibria, learning agents and oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibria of the one-shot game.
    StaticSolve(StaticArgs),
    /// Run one dynamic game and export its metrics.
    Simulate(SimulateArgs),
    /// Run a dynamic game with dueling deep Q-learners.
    TrainDeep(TrainDeepArgs),
    /// Exact reference solutions as CSV tables (row = x index, col = y index).
    Oracle(OracleArgs),
    /// Spectral efficiency of a learning receiver versus a random one.
    GainExperiment(GainArgs),
}

/// Flags shared by every subcommand. Each one overrides the same key from `--config`.
#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// g1 (sequential), g2 (simultaneous) or g3 (blind).
    #[arg(long)]
    game: Option<String>,
    /// tabular, deep, random or static-optimal.
    #[arg(long = "agent-r")]
    agent_r: Option<String>,
    /// tabular, deep, greedy, mixed, random or static-optimal.
    #[arg(long = "agent-j")]
    agent_j: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Path-loss exponent.
    #[arg(long)]
    alpha: Option<f64>,
    /// Closest allowed coordinate, metres.
    #[arg(long)]
    l: Option<f64>,
    /// Farthest allowed coordinate, metres.
    #[arg(long)]
    m: Option<f64>,
    #[arg(long = "n-positions")]
    n_positions: Option<usize>,
    #[arg(long = "max-step")]
    max_step: Option<usize>,
    /// value or spectral-efficiency.
    #[arg(long)]
    reward: Option<String>,
    #[arg(long = "ma-window")]
    ma_window: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    /// Config-file entries with the explicit flags layered on top.
    fn key_values(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(path) => KeyValues::load(path).with_context(|| format!("reading config {}", path.display()))?,
            None => KeyValues::new(),
        };
        let flags: [(&str, Option<String>); 12] = [
            ("game", self.game.clone()),
            ("agent_r", self.agent_r.clone()),
            ("agent_j", self.agent_j.clone()),
            ("steps", self.steps.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("l", self.l.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("n_positions", self.n_positions.map(|v| v.to_string())),
            ("max_step", self.max_step.map(|v| v.to_string())),
            ("reward", self.reward.clone()),
            ("ma_window", self.ma_window.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                kv.insert(key, v);
            }
        }
        Ok(kv)
    }
}

#[derive(Args)]
struct StaticArgs {
    #[command(flatten)]
    common: Common,
    /// Include thermal noise (23 dBm, -174 dBm/Hz, 20 MHz unless configured otherwise).
    #[arg(long)]
    noisy: bool,
    /// Resolution of the numerical search with noise.
    #[arg(long = "grid-n", default_value_t = DEFAULT_GRID_N)]
    grid_n: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Directory with `q_r.txt` / `q_j.txt` to start the tabular learners from.
    #[arg(long = "load-qtable")]
    load_qtable: Option<PathBuf>,
    /// Directory to write the final `q_r.txt` / `q_j.txt` into.
    #[arg(long = "save-qtable")]
    save_qtable: Option<PathBuf>,
    /// csv, json or both.
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Args)]
struct TrainDeepArgs {
    #[command(flatten)]
    sim: SimulateArgs,
    /// Hidden layer widths, comma separated.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    /// Replay buffer capacity.
    #[arg(long)]
    replay: Option<usize>,
    /// Target-network sync period in updates.
    #[arg(long)]
    sync: Option<usize>,
    /// Directory with `net_r.txt` / `net_j.txt` to start the deep learners from.
    #[arg(long = "load-net")]
    load_net: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum OracleGame {
    Static,
    G1,
    G2,
}

impl std::str::FromStr for OracleGame {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" => Ok(OracleGame::Static),
            "g1" => Ok(OracleGame::G1),
            "g2" => Ok(OracleGame::G2),
            other => bail!("oracle --game must be static, g1 or g2, got `{other}`"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Exact,
    Fp,
}

/// `--game` selects the oracle: static, g1 or g2.
#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = DEFAULT_VI_TOL)]
    tol: f64,
    /// Stage-game solver inside Shapley iteration.
    #[arg(long = "stage-solver", value_enum, default_value_t = Stage::Exact)]
    stage_solver: Stage,
    /// Fictitious-play iterations (static game, or per stage with `--stage-solver fp`).
    #[arg(long = "fp-iters", default_value_t = DEFAULT_FP_ITERS)]
    fp_iters: usize,
    /// Half-turns simulated for the long-run average of the equilibrium policies.
    #[arg(long = "average-steps", default_value_t = 1_000_000)]
    average_steps: usize,
}

#[derive(Args)]
struct GainArgs {
    #[command(flatten)]
    common: Common,
    /// Path-loss exponents to sweep, comma separated (`--alpha` sets a single one).
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    /// Shadowing variance in dB.
    #[arg(long = "shadow-var")]
    shadow_var: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::StaticSolve(a) => static_solve(&a),
        Command::Simulate(a) => simulate(&a, None, None),
        Command::TrainDeep(a) => train_deep(&a),
        Command::Oracle(a) => oracle(&a),
        Command::GainExperiment(a) => gain(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn static_solve(args: &StaticArgs) -> Result<()> {
    let kv = args.common.key_values()?;
    let mut cfg = if args.noisy {
        ScenarioConfig::vehicular(10.0, 50.0, 2.0, 0.0)?
    } else {
        ScenarioConfig::noiseless(10.0, 50.0, 2.0)?
    };
    cfg.apply(&kv)?;

    let mut out = KeyValues::new();
    let eq = if cfg.is_noiseless() {
        nash_noiseless(cfg.l, cfg.m, cfg.alpha)?
    } else {
        nash_with_noise(&cfg, args.grid_n)?
    };
    out.insert("jammer_pos", eq.jammer_pos);
    out.insert("p_near", eq.near_probability());
    out.insert("far_point", eq.far_point());
    out.insert("value", eq.game_value);
    if cfg.is_noiseless() {
        let (_, lead_j) = stackelberg(Player::Jammer, &cfg, false)?;
        let (_, lead_r) = stackelberg(Player::Receiver, &cfg, false)?;
        out.insert("stackelberg_leader_j", lead_j);
        out.insert("stackelberg_leader_r_pure", lead_r);
    }
    let text = out.to_string();
    emit(&text)?;
    if let Some(dir) = &args.common.out {
        ensure_dir(dir)?;
        write(&dir.join("static.txt"), &text)?;
    }
    Ok(())
}

fn experiment_config(kv: &KeyValues) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(GameVariant::Sequential, 1, 1_500_000, 0)?;
    cfg.apply(kv)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_tables(dir: &Path, cfg: &ExperimentConfig, warm: &mut WarmStart) -> Result<()> {
    let space = StateSpace::for_variant(cfg.variant);
    for (name, kind, slot) in [("q_r.txt", cfg.agent_r, &mut warm.q_r), ("q_j.txt", cfg.agent_j, &mut warm.q_j)] {
        let path = dir.join(name);
        if kind == AgentKind::Tabular && path.exists() {
            *slot = Some(QTable::load(cfg.grid, space, &path)?);
        }
    }
    if warm.q_r.is_none() && warm.q_j.is_none() {
        bail!("no q_r.txt or q_j.txt for a tabular agent in {}", dir.display());
    }
    Ok(())
}

fn load_nets(dir: &Path, cfg: &ExperimentConfig, warm: &mut WarmStart) -> Result<()> {
    for (name, kind, slot) in [("net_r.txt", cfg.agent_r, &mut warm.net_r), ("net_j.txt", cfg.agent_j, &mut warm.net_j)] {
        let path = dir.join(name);
        if kind == AgentKind::Deep && path.exists() {
            *slot = Some(DuelingNet::load(&path)?);
        }
    }
    if warm.net_r.is_none() && warm.net_j.is_none() {
        bail!("no net_r.txt or net_j.txt for a deep agent in {}", dir.display());
    }
    Ok(())
}

fn report(cfg: &ExperimentConfig, metrics: &RunMetrics) -> Result<()> {
    let s = metrics.summary(cfg.ma_window)?;
    let mut kv = KeyValues::new();
    kv.insert("game", cfg.variant.label());
    kv.insert("agent_r", cfg.agent_r);
    kv.insert("agent_j", cfg.agent_j);
    kv.insert("steps", s.steps);
    kv.insert("overall_mean", s.overall_mean);
    kv.insert("late_mean", s.late_mean);
    kv.insert("late_std", s.late_std);
    kv.insert("plateau_step", s.plateau_step.map_or("none".to_string(), |p| p.to_string()));
    kv.insert("wall_clock_s", format!("{:.3}", s.wall_clock_s));
    emit(&kv.to_string())?;
    Ok(())
}

fn simulate(args: &SimulateArgs, extra: Option<&KeyValues>, load_net: Option<&Path>) -> Result<()> {
    let mut kv = args.common.key_values()?;
    if let Some(extra) = extra {
        for (k, v) in extra.iter() {
            kv.insert(k, v);
        }
    }
    let cfg = experiment_config(&kv)?;
    let mut warm = WarmStart::default();
    if let Some(dir) = &args.load_qtable {
        load_tables(dir, &cfg, &mut warm)?;
    }
    if let Some(dir) = load_net {
        load_nets(dir, &cfg, &mut warm)?;
    }
    let metrics = run_experiment_warm(&cfg, warm)?;
    report(&cfg, &metrics)?;

    if let Some(dir) = &args.common.out {
        if matches!(args.format, Format::Csv | Format::Both) {
            export(&metrics, &cfg, ExportFormat::Csv, dir)?;
        }
        if matches!(args.format, Format::Json | Format::Both) {
            export(&metrics, &cfg, ExportFormat::Json, dir)?;
        }
        write(&dir.join("config.txt"), &cfg.to_key_values().to_string())?;
        for (name, net) in [("net_r.txt", &metrics.net_r), ("net_j.txt", &metrics.net_j)] {
            if let Some(net) = net {
                net.save(dir.join(name))?;
            }
        }
    }
    if let Some(dir) = &args.save_qtable {
        ensure_dir(dir)?;
        let mut saved = 0;
        for (name, table) in [("q_r.txt", &metrics.q_r), ("q_j.txt", &metrics.q_j)] {
            if let Some(t) = table {
                t.save(dir.join(name))?;
                saved += 1;
            }
        }
        if saved == 0 {
            bail!("--save-qtable needs at least one tabular agent");
        }
    }
    Ok(())
}

fn train_deep(args: &TrainDeepArgs) -> Result<()> {
    let mut extra = KeyValues::new();
    let common = &args.sim.common;
    let file = match &common.config {
        Some(p) => KeyValues::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => KeyValues::new(),
    };
    // deep learners on both sides and the simultaneous game unless told otherwise
    if common.agent_r.is_none() && file.get("agent_r").is_none() {
        extra.insert("agent_r", "deep");
    }
    if common.agent_j.is_none() && file.get("agent_j").is_none() {
        extra.insert("agent_j", "deep");
    }
    if common.game.is_none() && file.get("game").is_none() {
        extra.insert("game", "g2");
    }
    if common.ma_window.is_none() && file.get("ma_window").is_none() {
        extra.insert("ma_window", 500);
    }
    if let Some(h) = &args.hidden {
        extra.insert("hidden", h);
    }
    if let Some(v) = args.batch {
        extra.insert("batch", v);
    }
    if let Some(v) = args.replay {
        extra.insert("replay", v);
    }
    if let Some(v) = args.sync {
        extra.insert("sync", v);
    }
    simulate(&args.sim, Some(&extra), args.load_net.as_deref())
}

fn oracle(args: &OracleArgs) -> Result<()> {
    let kv = args.common.key_values()?;
    let mut scenario = ScenarioConfig::noiseless(10.0, 50.0, 2.0)?;
    scenario.apply(&kv)?;
    let n = kv.get_parsed::<usize>("n_positions")?.unwrap_or(9);
    let s = kv.get_parsed::<usize>("max_step")?.unwrap_or(1);
    let grid = GridSpec::new(n, scenario.l, scenario.m, s)?;
    let seed = kv.get_parsed::<u64>("seed")?.unwrap_or(0);
    let alpha = scenario.alpha;
    let which: OracleGame = kv.get("game").context("oracle needs --game static|g1|g2")?.parse()?;

    let mut files: Vec<(&str, String)> = Vec::new();
    let mut summary = KeyValues::new();
    let episodes = 10;
    let episode_len = (args.average_steps / episodes).max(1);
    match which {
        OracleGame::Static => {
            let m = PayoffMatrix::static_game(&grid.positions(), alpha)?;
            let fp = fictitious_play(&m, args.fp_iters)?;
            let exact = solve_matrix_game(&m)?;
            let data: Vec<f64> = (0..n).flat_map(|x| m.row(x).to_vec()).collect();
            files.push(("static_payoff.csv", table_csv(n, &data)));
            summary.insert("fp_value", fp.value);
            summary.insert("fp_lower", fp.lower);
            summary.insert("fp_upper", fp.upper);
            summary.insert("exact_value", exact.value);
            summary.insert("receiver_strategy", join(&fp.row_strategy));
            summary.insert("jammer_strategy", join(&fp.col_strategy));
        }
        OracleGame::G1 => {
            let v = alternating_minimax_vi(&grid, alpha, args.gamma, args.tol)?;
            let mut rng = stream_rng(seed, Stream::Env);
            let avg = alternating_average_reward(&v, &grid, alpha, args.gamma, episodes, episode_len, &mut rng)?;
            files.push(("g1_receiver_to_move.csv", table_csv(n, &v.receiver_to_move)));
            files.push(("g1_jammer_to_move.csv", table_csv(n, &v.jammer_to_move)));
            summary.insert("sweeps", v.residuals.len());
            summary.insert("long_run_average", avg);
        }
        OracleGame::G2 => {
            let solver = match args.stage_solver {
                Stage::Exact => StageSolver::Exact,
                Stage::Fp => StageSolver::FictitiousPlay { iters: args.fp_iters },
            };
            let v = shapley_vi(&grid, alpha, args.gamma, args.tol, solver)?;
            let mut rng = stream_rng(seed, Stream::Env);
            let avg = simultaneous_average_reward(&v, &grid, alpha, episodes, episode_len, &mut rng)?;
            files.push(("g2_values.csv", table_csv(n, &v.values)));
            summary.insert("sweeps", v.residuals.len());
            summary.insert("stage_gap", v.stage_gap);
            summary.insert("long_run_average", avg);
        }
    }

    match &args.common.out {
        Some(dir) => {
            ensure_dir(dir)?;
            for (name, text) in &files {
                write(&dir.join(name), text)?;
            }
            write(&dir.join("oracle_summary.txt"), &summary.to_string())?;
            emit(&summary.to_string())?;
        }
        None => {
            emit(&files[0].1)?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|p| format!("{p:.6}")).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad number `{t}`")))
        .collect()
}

fn gain(args: &GainArgs) -> Result<()> {
    let mut kv = args.common.key_values()?;
    if let Some(a) = &args.alphas {
        kv.insert("alphas", a);
    }
    if let Some(r) = args.runs {
        kv.insert("runs", r);
    }
    if let Some(v) = args.shadow_var {
        kv.insert("shadow_var_db", v);
    }
    let mut cfg = GainConfig::default();
    if let Some(v) = kv.get_parsed("l")? {
        cfg.l = v;
    }
    if let Some(v) = kv.get_parsed("m")? {
        cfg.m = v;
    }
    if let Some(v) = kv.get_parsed("n_positions")? {
        cfg.n_positions = v;
    }
    if let Some(v) = kv.get_parsed("max_step")? {
        cfg.max_step = v;
    }
    if let Some(v) = kv.get_parsed("shadow_var_db")? {
        cfg.shadow_var_db = v;
    }
    if let Some(v) = kv.get_parsed("runs")? {
        cfg.runs = v;
    }
    if let Some(v) = kv.get_parsed("steps")? {
        cfg.total_steps = v;
    }
    if let Some(v) = kv.get_parsed("seed")? {
        cfg.seed = v;
    }
    // an explicit --alpha beats a list from the config file
    if let Some(a) = args.common.alpha {
        cfg.alphas = vec![a];
    } else if let Some(list) = kv.get("alphas") {
        cfg.alphas = parse_list(list)?;
    } else if let Some(a) = kv.get_parsed("alpha")? {
        cfg.alphas = vec![a];
    }

    let points = strategic_gain_experiment(&cfg)?;
    let mut csv = String::from("alpha,strategic_se,random_se,ratio\n");
    for p in &points {
        let _ = writeln!(csv, "{:?},{:?},{:?},{:?}", p.alpha, p.strategic_se, p.random_se, p.ratio);
    }
    emit(&csv)?;
    if let Some(dir) = &args.common.out {
        ensure_dir(dir)?;
        write(&dir.join("gain.csv"), &csv)?;
        let doc = serde_json::json!({ "config": cfg, "points": points });
        write(&dir.join("gain.json"), &serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}
