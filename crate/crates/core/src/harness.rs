//! Experiment runner: wires the environment, the two players' policies and
//! the metrics, plus the strategic-gain sweep and CSV/JSON export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    epsilon_greedy, epsilon_schedule, greedy_jammer, mixed_jammer, q_update, random_action, state_value, LearningConfig, QTable,
    StateSpace,
};
use crate::channel::ScenarioConfig;
use crate::deep::{encode_state, legal_mask, masked_max, DeepAgent, DeepConfig, DuelingNet};
use crate::env::{decision_view, Action, Environment, EnvState, GameVariant, GridSpec, Observation, RewardModel};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::rng::{stream_rng, Stream};
use crate::static_game::{nash_noiseless, nash_with_noise, DEFAULT_GRID_N};
use crate::Player;

/// Period, in steps, of the Q-table range check.
pub const BOUND_CHECK_PERIOD: u64 = 100_000;
/// Share of the run treated as converged when summarizing.
pub const LATE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Tabular,
    Deep,
    Greedy,
    Mixed,
    Random,
    StaticOptimal,
}

impl AgentKind {
    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Tabular => "tabular",
            AgentKind::Deep => "deep",
            AgentKind::Greedy => "greedy",
            AgentKind::Mixed => "mixed",
            AgentKind::Random => "random",
            AgentKind::StaticOptimal => "static-optimal",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, AgentKind::Tabular | AgentKind::Deep)
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tabular" | "q" => Ok(AgentKind::Tabular),
            "deep" | "dqn" => Ok(AgentKind::Deep),
            "greedy" => Ok(AgentKind::Greedy),
            "mixed" => Ok(AgentKind::Mixed),
            "random" => Ok(AgentKind::Random),
            "static-optimal" | "static" => Ok(AgentKind::StaticOptimal),
            other => Err(Error::InvalidConfig(format!("unknown agent kind `{other}`"))),
        }
    }
}

/// Everything that defines one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub grid: GridSpec,
    pub variant: GameVariant,
    pub reward: RewardModel,
    pub agent_r: AgentKind,
    pub agent_j: AgentKind,
    pub learning_r: LearningConfig,
    pub learning_j: LearningConfig,
    pub deep: DeepConfig,
    pub total_steps: u64,
    pub seed: u64,
    pub ma_window: usize,
}

impl ExperimentConfig {
    /// Tabular learners on both sides with the per-game defaults: `N = 9`,
    /// `L = 10`, `M = 50`, `α = 2`, noiseless value payoff.
    pub fn new(variant: GameVariant, max_step: usize, total_steps: u64, seed: u64) -> Result<Self> {
        let scenario = ScenarioConfig::noiseless(10.0, 50.0, 2.0)?;
        let grid = GridSpec::new(9, 10.0, 50.0, max_step)?;
        let learning = LearningConfig::tabular(variant, total_steps);
        Ok(Self {
            scenario,
            grid,
            variant,
            reward: RewardModel::Value,
            agent_r: AgentKind::Tabular,
            agent_j: AgentKind::Tabular,
            learning_r: learning,
            learning_j: learning,
            deep: DeepConfig::default(),
            total_steps,
            seed,
            ma_window: 5000,
        })
    }

    /// Resets both learning configurations to the defaults for the current
    /// game, agent kinds and step count.
    pub fn with_default_learning(mut self) -> Self {
        let pick = |kind: AgentKind| match kind {
            AgentKind::Deep => LearningConfig::deep(self.total_steps),
            _ => LearningConfig::tabular(self.variant, self.total_steps),
        };
        self.learning_r = pick(self.agent_r);
        self.learning_j = pick(self.agent_j);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.grid.validate()?;
        if self.grid.l != self.scenario.l || self.grid.m != self.scenario.m {
            return Err(Error::InvalidConfig(format!(
                "grid spans [{}, {}] but scenario spans [{}, {}]",
                self.grid.l, self.grid.m, self.scenario.l, self.scenario.m
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total steps must be positive".into()));
        }
        if self.ma_window == 0 {
            return Err(Error::InvalidConfig("moving-average window must be positive".into()));
        }
        if matches!(self.agent_r, AgentKind::Greedy | AgentKind::Mixed) {
            return Err(Error::InvalidConfig(format!("`{}` is a jammer-only policy", self.agent_r)));
        }
        for (kind, learning) in [(self.agent_r, &self.learning_r), (self.agent_j, &self.learning_j)] {
            if kind.learns() {
                learning.validate()?;
                if learning.total_steps != self.total_steps {
                    return Err(Error::InvalidConfig(format!(
                        "learning schedule spans {} steps but the run has {}",
                        learning.total_steps, self.total_steps
                    )));
                }
            }
            if kind == AgentKind::Deep {
                self.deep.validate()?;
            }
        }
        Ok(())
    }

    /// Flat `key = value` form, readable back by [`apply`](Self::apply).
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = self.scenario.to_key_values();
        let hidden: Vec<String> = self.deep.hidden.iter().map(usize::to_string).collect();
        for (k, v) in [
            ("game", self.variant.label().to_string()),
            ("reward", reward_label(self.reward).to_string()),
            ("agent_r", self.agent_r.to_string()),
            ("agent_j", self.agent_j.to_string()),
            ("n_positions", self.grid.n_positions.to_string()),
            ("max_step", self.grid.max_step.to_string()),
            ("steps", self.total_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("ma_window", self.ma_window.to_string()),
            ("lr_r", format!("{:?}", self.learning_r.learning_rate)),
            ("lr_j", format!("{:?}", self.learning_j.learning_rate)),
            ("gamma", format!("{:?}", self.learning_r.discount)),
            ("eps_min", format!("{:?}", self.learning_r.eps_min)),
            ("decay_horizon", self.learning_r.decay_horizon.to_string()),
            ("hidden", hidden.join(",")),
            ("batch", self.deep.batch.to_string()),
            ("replay", self.deep.replay.to_string()),
            ("sync", self.deep.sync.to_string()),
        ] {
            kv.insert(k, v);
        }
        kv
    }

    /// Overrides fields from `kv`. Learning schedules are recomputed from the
    /// resulting game, agents and step count, then explicit learning keys apply.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        self.scenario.apply(kv)?;
        if let Some(v) = kv.get_parsed::<GameVariant>("game")? {
            self.variant = v;
        }
        if let Some(v) = kv.get_parsed::<RewardModel>("reward")? {
            self.reward = v;
        }
        if let Some(v) = kv.get_parsed::<AgentKind>("agent_r")? {
            self.agent_r = v;
        }
        if let Some(v) = kv.get_parsed::<AgentKind>("agent_j")? {
            self.agent_j = v;
        }
        let n = kv.get_parsed::<usize>("n_positions")?.unwrap_or(self.grid.n_positions);
        let s = kv.get_parsed::<usize>("max_step")?.unwrap_or(self.grid.max_step);
        self.grid = GridSpec::new(n, self.scenario.l, self.scenario.m, s)?;
        if let Some(v) = kv.get_parsed("steps")? {
            self.total_steps = v;
        }
        if let Some(v) = kv.get_parsed("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.get_parsed("ma_window")? {
            self.ma_window = v;
        }
        if let Some(v) = kv.get("hidden") {
            self.deep.hidden = parse_hidden(v)?;
        }
        if let Some(v) = kv.get_parsed("batch")? {
            self.deep.batch = v;
        }
        if let Some(v) = kv.get_parsed("replay")? {
            self.deep.replay = v;
        }
        if let Some(v) = kv.get_parsed("sync")? {
            self.deep.sync = v;
        }
        let defaults = self.clone().with_default_learning();
        self.learning_r = defaults.learning_r;
        self.learning_j = defaults.learning_j;
        for learning in [&mut self.learning_r, &mut self.learning_j] {
            if let Some(v) = kv.get_parsed("gamma")? {
                learning.discount = v;
            }
            if let Some(v) = kv.get_parsed("eps_min")? {
                learning.eps_min = v;
            }
            if let Some(v) = kv.get_parsed("decay_horizon")? {
                learning.decay_horizon = v;
            }
        }
        if let Some(v) = kv.get_parsed("lr_r")? {
            self.learning_r.learning_rate = v;
        }
        if let Some(v) = kv.get_parsed("lr_j")? {
            self.learning_j.learning_rate = v;
        }
        Ok(())
    }
}

fn reward_label(r: RewardModel) -> &'static str {
    match r {
        RewardModel::Value => "value",
        RewardModel::SpectralEfficiency => "spectral-efficiency",
    }
}

/// Parses `64,64` style layer lists; an empty string means no hidden layer.
pub fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("bad hidden size `{t}`: {e}")))
        })
        .collect()
}

/// Optional pre-trained models for a run.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub q_r: Option<QTable>,
    pub q_j: Option<QTable>,
    pub net_r: Option<DuelingNet>,
    pub net_j: Option<DuelingNet>,
}

/// Everything recorded during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Receiver payoff after every step (every half-turn in the sequential game).
    pub rewards: Vec<f64>,
    /// `(x_idx, y_idx)` after every step.
    pub trace: Vec<(usize, usize)>,
    /// Visit frequencies, row-major in `x_idx`.
    pub occupancy: Vec<f64>,
    /// Final state values of each learner over `(x_idx, y_idx)`, row-major in `x_idx`.
    pub value_r: Option<Vec<f64>>,
    pub value_j: Option<Vec<f64>>,
    pub n_positions: usize,
    pub wall_clock_s: f64,
    #[serde(skip)]
    pub q_r: Option<QTable>,
    #[serde(skip)]
    pub q_j: Option<QTable>,
    #[serde(skip)]
    pub net_r: Option<DuelingNet>,
    #[serde(skip)]
    pub net_j: Option<DuelingNet>,
}

impl RunMetrics {
    pub fn summary(&self, ma_window: usize) -> Result<RunSummary> {
        let (late_mean, late_std) = late_window_stats(&self.rewards, LATE_FRACTION)?;
        Ok(RunSummary {
            steps: self.rewards.len(),
            overall_mean: self.rewards.iter().sum::<f64>() / self.rewards.len() as f64,
            late_mean,
            late_std,
            plateau_step: plateau_step(&self.rewards, ma_window, LATE_FRACTION, 0.1)?,
            wall_clock_s: self.wall_clock_s,
        })
    }

    /// Marginal visit frequencies of the jammer over position indices.
    pub fn jammer_marginal(&self) -> Vec<f64> {
        let n = self.n_positions;
        (0..n).map(|y| (0..n).map(|x| self.occupancy[x * n + y]).sum()).collect()
    }

    /// Marginal visit frequencies of the receiver over position indices.
    pub fn receiver_marginal(&self) -> Vec<f64> {
        let n = self.n_positions;
        (0..n).map(|x| self.occupancy[x * n..(x + 1) * n].iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub overall_mean: f64,
    pub late_mean: f64,
    pub late_std: f64,
    pub plateau_step: Option<usize>,
    pub wall_clock_s: f64,
}

/// Trailing moving average; the first `w−1` outputs average the available prefix.
pub fn moving_average(series: &[f64], w: usize) -> Result<Vec<f64>> {
    if w == 0 {
        return Err(Error::Domain("moving-average window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for (i, &v) in series.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= series[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    Ok(out)
}

/// Visit frequencies over `n × n` index pairs, row-major in the first index.
pub fn joint_occupancy(trace: &[(usize, usize)], n: usize) -> Result<Vec<f64>> {
    if trace.is_empty() {
        return Err(Error::Contract("occupancy of an empty trace".into()));
    }
    let mut counts = vec![0u64; n * n];
    for &(x, y) in trace {
        if x >= n || y >= n {
            return Err(Error::Contract(format!("trace pair ({x}, {y}) outside a grid of {n}")));
        }
        counts[x * n + y] += 1;
    }
    let total = trace.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Mean and population standard deviation of the last `fraction` of `series`.
pub fn late_window_stats(series: &[f64], fraction: f64) -> Result<(f64, f64)> {
    if series.is_empty() || !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "late window needs a nonempty series and a fraction in (0, 1], got {} items and {fraction}",
            series.len()
        )));
    }
    let k = ((series.len() as f64 * fraction).round() as usize).clamp(1, series.len());
    let tail = &series[series.len() - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k as f64;
    Ok((mean, var.sqrt()))
}

/// First step after which the `w`-wide moving average stays within
/// `band · |final|` of the final value, the final value being the mean of the
/// last `final_fraction` of the series. `None` when even the last point is outside.
pub fn plateau_step(series: &[f64], w: usize, final_fraction: f64, band: f64) -> Result<Option<usize>> {
    let (final_value, _) = late_window_stats(series, final_fraction)?;
    let ma = moving_average(series, w)?;
    let tol = band * final_value.abs();
    match ma.iter().rposition(|v| (v - final_value).abs() > tol) {
        None => Ok(Some(0)),
        Some(k) if k + 1 < ma.len() => Ok(Some(k + 1)),
        Some(_) => Ok(None),
    }
}

enum Policy {
    Tabular { table: QTable, learning: LearningConfig },
    Deep(Box<DeepAgent>),
    Greedy,
    Mixed,
    Random,
    StaticOptimal { target: usize },
}

impl Policy {
    fn act<R: Rng + ?Sized>(&self, player: Player, obs: &Observation, state: &EnvState, t: u64, grid: &GridSpec, rng: &mut R) -> Result<Action> {
        let (own, opp) = match player {
            Player::Receiver => (state.x_idx, state.y_idx),
            Player::Jammer => (state.y_idx, state.x_idx),
        };
        match self {
            Policy::Tabular { table, learning } => epsilon_greedy(table, obs, epsilon_schedule(t, learning), rng),
            Policy::Deep(agent) => agent.act(obs, epsilon_schedule(t, &agent.learning), rng),
            Policy::Greedy => Ok(greedy_jammer(own, opp, grid)),
            Policy::Mixed => Ok(mixed_jammer(own, opp, grid, rng)),
            Policy::Random => Ok(random_action(own, grid, rng)),
            Policy::StaticOptimal { target } => Ok(greedy_jammer(own, *target, grid)),
        }
    }

    fn learn<R: Rng + ?Sized>(&mut self, s: &Observation, a: Action, r: f64, s_next: &Observation, rng: &mut R) -> Result<()> {
        match self {
            Policy::Tabular { table, learning } => q_update(table, s, a, r, s_next, learning),
            Policy::Deep(agent) => agent.learn(s, a, r, s_next, rng).map(|_| ()),
            _ => Ok(()),
        }
    }

    fn value_grid(&self, player: Player, variant: GameVariant, grid: &GridSpec) -> Result<Option<Vec<f64>>> {
        let n = grid.n_positions;
        let view = |x: usize, y: usize| {
            let (own, opponent) = match player {
                Player::Receiver => (x, y),
                Player::Jammer => (y, x),
            };
            if variant.observes_opponent() {
                Observation::Full { own, opponent }
            } else {
                Observation::OwnOnly { own }
            }
        };
        let mut out = Vec::with_capacity(n * n);
        match self {
            Policy::Tabular { table, .. } => {
                for x in 0..n {
                    for y in 0..n {
                        out.push(state_value(table, &view(x, y))?);
                    }
                }
            }
            Policy::Deep(agent) => {
                for x in 0..n {
                    for y in 0..n {
                        let obs = view(x, y);
                        let q = agent.net.forward(&encode_state(&obs, grid)?)?;
                        out.push(masked_max(&q, &legal_mask(obs.own(), grid))?.1);
                    }
                }
            }
            _ => return Ok(None),
        }
        Ok(Some(out))
    }

    fn check_bounds(&self, player: Player, r_max: f64) -> Result<()> {
        if let Policy::Tabular { table, learning } = self {
            let cap = r_max / (1.0 - learning.discount) * (1.0 + 1e-9);
            let (lo, hi) = table.min_max();
            let (want_lo, want_hi) = match player {
                Player::Receiver => (0.0, cap),
                Player::Jammer => (-cap, 0.0),
            };
            if lo < want_lo || hi > want_hi {
                return Err(Error::Contract(format!(
                    "{player} Q-values [{lo}, {hi}] left [{want_lo}, {want_hi}]"
                )));
            }
        }
        Ok(())
    }
}

fn static_target(player: Player, cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<usize> {
    let eq = if cfg.scenario.is_noiseless() {
        nash_noiseless(cfg.scenario.l, cfg.scenario.m, cfg.scenario.alpha)?
    } else {
        nash_with_noise(&cfg.scenario, DEFAULT_GRID_N)?
    };
    let coord = match player {
        Player::Jammer => eq.jammer_pos,
        Player::Receiver => {
            if rng.random::<f64>() < eq.near_probability() {
                cfg.scenario.l
            } else {
                eq.far_point()
            }
        }
    };
    Ok(cfg.grid.nearest_index(coord))
}

fn build_policy(
    player: Player,
    kind: AgentKind,
    learning: LearningConfig,
    cfg: &ExperimentConfig,
    warm_q: Option<QTable>,
    warm_net: Option<DuelingNet>,
    rng: &mut ChaCha8Rng,
) -> Result<Policy> {
    let space = StateSpace::for_variant(cfg.variant);
    Ok(match kind {
        AgentKind::Tabular => {
            let table = match warm_q {
                Some(t) if t.grid() == &cfg.grid && t.space() == space => t,
                Some(_) => return Err(Error::InvalidConfig(format!("warm-start Q-table for {player} does not match the game"))),
                None => QTable::new(cfg.grid, space),
            };
            Policy::Tabular { table, learning }
        }
        AgentKind::Deep => {
            let agent = DeepAgent::new(cfg.grid, cfg.variant.observes_opponent(), cfg.deep.clone(), learning, rng)?;
            let agent = match warm_net {
                Some(net) => agent.with_network(net)?,
                None => agent,
            };
            Policy::Deep(Box::new(agent))
        }
        AgentKind::Greedy => Policy::Greedy,
        AgentKind::Mixed => Policy::Mixed,
        AgentKind::Random => Policy::Random,
        AgentKind::StaticOptimal => Policy::StaticOptimal {
            target: static_target(player, cfg, rng)?,
        },
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    run_experiment_warm(cfg, WarmStart::default())
}

/// Runs one game with both players learning online.
///
/// In the sequential game each learner is updated with the payoff it
/// collected right after its own move, bootstrapping from its next decision
/// state; the logged series still records the receiver payoff every
/// half-turn. Exploration follows the global step counter.
pub fn run_experiment_warm(cfg: &ExperimentConfig, warm: WarmStart) -> Result<RunMetrics> {
    cfg.validate()?;
    let started = Instant::now();
    let grid = cfg.grid;
    let mut env = Environment::new(grid, cfg.scenario, cfg.variant, cfg.reward, stream_rng(cfg.seed, Stream::Shadowing))?;
    let mut env_rng = stream_rng(cfg.seed, Stream::Env);
    let mut rng_r = stream_rng(cfg.seed, Stream::AgentReceiver);
    let mut rng_j = stream_rng(cfg.seed, Stream::AgentJammer);
    let mut pol_r = build_policy(Player::Receiver, cfg.agent_r, cfg.learning_r, cfg, warm.q_r, warm.net_r, &mut rng_r)?;
    let mut pol_j = build_policy(Player::Jammer, cfg.agent_j, cfg.learning_j, cfg, warm.q_j, warm.net_j, &mut rng_j)?;
    let r_max = env.max_value();
    let check_bounds = cfg.reward == RewardModel::Value;

    let steps = cfg.total_steps as usize;
    let mut rewards = Vec::with_capacity(steps);
    let mut trace = Vec::with_capacity(steps);
    let mut state = env.reset(&mut env_rng);
    let variant = cfg.variant;
    // sequential game: last own move awaiting its bootstrap state
    let mut pending: [Option<(Observation, Action, f64)>; 2] = [None, None];

    for t in 0..cfg.total_steps {
        if variant.is_simultaneous() {
            let obs_r = decision_view(&state, Player::Receiver, variant);
            let obs_j = decision_view(&state, Player::Jammer, variant);
            let a_r = pol_r.act(Player::Receiver, &obs_r, &state, t, &grid, &mut rng_r)?;
            let a_j = pol_j.act(Player::Jammer, &obs_j, &state, t, &grid, &mut rng_j)?;
            let out = env.step_simultaneous(&state, a_r, a_j)?;
            state = out.state;
            let next_r = decision_view(&state, Player::Receiver, variant);
            let next_j = decision_view(&state, Player::Jammer, variant);
            pol_r.learn(&obs_r, a_r, out.reward_r, &next_r, &mut rng_r)?;
            pol_j.learn(&obs_j, a_j, out.reward_j, &next_j, &mut rng_j)?;
            rewards.push(out.reward_r);
        } else {
            let mover = state.turn;
            let slot = match mover {
                Player::Receiver => 0,
                Player::Jammer => 1,
            };
            let obs = decision_view(&state, mover, variant);
            let (policy, rng) = match mover {
                Player::Receiver => (&mut pol_r, &mut rng_r),
                Player::Jammer => (&mut pol_j, &mut rng_j),
            };
            if let Some((ps, pa, pr)) = pending[slot].take() {
                policy.learn(&ps, pa, pr, &obs, rng)?;
            }
            let a = policy.act(mover, &obs, &state, t, &grid, rng)?;
            let out = env.step_sequential(&state, a)?;
            state = out.state;
            let own_reward = match mover {
                Player::Receiver => out.reward_r,
                Player::Jammer => out.reward_j,
            };
            pending[slot] = Some((obs, a, own_reward));
            rewards.push(out.reward_r);
        }
        trace.push((state.x_idx, state.y_idx));
        if check_bounds && (t + 1) % BOUND_CHECK_PERIOD == 0 {
            pol_r.check_bounds(Player::Receiver, r_max)?;
            pol_j.check_bounds(Player::Jammer, r_max)?;
        }
    }
    if check_bounds {
        pol_r.check_bounds(Player::Receiver, r_max)?;
        pol_j.check_bounds(Player::Jammer, r_max)?;
    }

    let occupancy = joint_occupancy(&trace, grid.n_positions)?;
    let value_r = pol_r.value_grid(Player::Receiver, variant, &grid)?;
    let value_j = pol_j.value_grid(Player::Jammer, variant, &grid)?;
    let (q_r, net_r) = into_models(pol_r);
    let (q_j, net_j) = into_models(pol_j);
    Ok(RunMetrics {
        rewards,
        trace,
        occupancy,
        value_r,
        value_j,
        n_positions: grid.n_positions,
        wall_clock_s: started.elapsed().as_secs_f64(),
        q_r,
        q_j,
        net_r,
        net_j,
    })
}

fn into_models(p: Policy) -> (Option<QTable>, Option<DuelingNet>) {
    match p {
        Policy::Tabular { table, .. } => (Some(table), None),
        Policy::Deep(agent) => (None, Some(agent.net)),
        _ => (None, None),
    }
}

/// Settings of the strategic-versus-random receiver comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainConfig {
    pub l: f64,
    pub m: f64,
    pub n_positions: usize,
    pub max_step: usize,
    pub shadow_var_db: f64,
    pub alphas: Vec<f64>,
    pub runs: usize,
    pub total_steps: u64,
    pub seed: u64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self {
            l: 10.0,
            m: 570.0,
            n_positions: 15,
            max_step: 1,
            shadow_var_db: 2.5,
            alphas: vec![2.0, 2.5, 3.0],
            runs: 10,
            total_steps: 1_500_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainPoint {
    pub alpha: f64,
    /// Late-window mean spectral efficiency with a learning receiver, averaged over runs.
    pub strategic_se: f64,
    /// Same with a uniformly random receiver.
    pub random_se: f64,
    pub ratio: f64,
    pub strategic_runs: Vec<f64>,
    pub random_runs: Vec<f64>,
}

/// Sequential game with spectral-efficiency payoffs: a learning receiver and
/// a uniformly random one, each against a learning jammer, `runs` times per α.
pub fn strategic_gain_experiment(cfg: &GainConfig) -> Result<Vec<GainPoint>> {
    if cfg.runs == 0 || cfg.alphas.is_empty() {
        return Err(Error::InvalidConfig("gain experiment needs at least one run and one α".into()));
    }
    let mut points = Vec::with_capacity(cfg.alphas.len());
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let mut strategic_runs = Vec::with_capacity(cfg.runs);
        let mut random_runs = Vec::with_capacity(cfg.runs);
        for run in 0..cfg.runs {
            let seed = cfg.seed.wrapping_add((ai * 1000 + run) as u64);
            let mut exp = ExperimentConfig::new(GameVariant::Sequential, cfg.max_step, cfg.total_steps, seed)?;
            exp.scenario = ScenarioConfig::vehicular(cfg.l, cfg.m, alpha, cfg.shadow_var_db)?;
            exp.grid = GridSpec::new(cfg.n_positions, cfg.l, cfg.m, cfg.max_step)?;
            exp.reward = RewardModel::SpectralEfficiency;
            exp.ma_window = 500;
            let strategic = run_experiment(&exp)?;
            strategic_runs.push(late_window_stats(&strategic.rewards, LATE_FRACTION)?.0);
            exp.agent_r = AgentKind::Random;
            let random = run_experiment(&exp)?;
            random_runs.push(late_window_stats(&random.rewards, LATE_FRACTION)?.0);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let strategic_se = mean(&strategic_runs);
        let random_se = mean(&random_runs);
        points.push(GainPoint {
            alpha,
            strategic_se,
            random_se,
            ratio: strategic_se / random_se,
            strategic_runs,
            random_runs,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Document written by a JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
    pub files: Vec<String>,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(name.to_string())
}

fn grid_csv(n: usize, values: &[f64]) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..n).map(|y| format!("y{y}")).collect();
    let _ = writeln!(out, "x_idx,{}", header.join(","));
    for x in 0..n {
        let row: Vec<String> = values[x * n..(x + 1) * n].iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{x},{}", row.join(","));
    }
    out
}

/// CSV: one file per series or matrix into `dir`. JSON: `run.json` with the
/// config echo, summary statistics and the CSV files present in `dir`.
pub fn export(metrics: &RunMetrics, cfg: &ExperimentConfig, format: ExportFormat, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = metrics.n_positions;
    let written = match format {
        ExportFormat::Csv => {
            let ma = moving_average(&metrics.rewards, cfg.ma_window)?;
            let mut rewards = String::from("step,reward_r,moving_average\n");
            for (i, (r, m)) in metrics.rewards.iter().zip(&ma).enumerate() {
                let _ = writeln!(rewards, "{i},{r:?},{m:?}");
            }
            let mut trace = String::from("step,x_idx,y_idx\n");
            for (i, (x, y)) in metrics.trace.iter().enumerate() {
                let _ = writeln!(trace, "{i},{x},{y}");
            }
            let mut files = vec![
                write_file(dir, "rewards.csv", &rewards)?,
                write_file(dir, "trace.csv", &trace)?,
                write_file(dir, "occupancy.csv", &grid_csv(n, &metrics.occupancy))?,
            ];
            if let Some(v) = &metrics.value_r {
                files.push(write_file(dir, "value_r.csv", &grid_csv(n, v))?);
            }
            if let Some(v) = &metrics.value_j {
                files.push(write_file(dir, "value_j.csv", &grid_csv(n, v))?);
            }
            files
        }
        ExportFormat::Json => {
            let mut files: Vec<String> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|name| name.ends_with(".csv"))
                .collect();
            files.sort();
            let report = RunReport {
                config: cfg.clone(),
                summary: metrics.summary(cfg.ma_window)?,
                files,
            };
            vec![write_file(dir, "run.json", &serde_json::to_string_pretty(&report)?)?]
        }
    };
    Ok(written.into_iter().map(|f| dir.join(f)).collect())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 2).unwrap(), vec![1.0, 1.5, 2.5]);
        let c = vec![0.3; 50];
        for v in moving_average(&c, 7).unwrap() {
            assert_relative_eq!(v, 0.3, max_relative = 1e-12);
        }
        let s = vec![4.0, -1.0, 2.5];
        assert_eq!(moving_average(&s, 1).unwrap(), s);
        assert!(moving_average(&s, 0).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let occ = joint_occupancy(&[(2, 3); 10], 4).unwrap();
        assert_eq!(occ[2 * 4 + 3], 1.0);
        assert_eq!(occ.iter().sum::<f64>(), 1.0);
        assert!(joint_occupancy(&[], 4).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let trace: Vec<(usize, usize)> = (0..1_000_000).map(|_| (rng.random_range(0..9), rng.random_range(0..9))).collect();
        let occ = joint_occupancy(&trace, 9).unwrap();
        let p: f64 = 1.0 / 81.0;
        let sigma = (p * (1.0 - p) / 1e6).sqrt();
        for v in &occ {
            assert!((v - p).abs() < 3.5 * sigma);
        }
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn plateau_detection() {
        let mut s = vec![0.0; 100];
        s.extend(vec![1.0; 900]);
        assert_eq!(plateau_step(&s, 1, 0.1, 0.1).unwrap(), Some(100));
        assert_eq!(plateau_step(&vec![2.0; 10], 3, 0.1, 0.1).unwrap(), Some(0));
    }

    #[test]
    fn late_window() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        let (m, sd) = late_window_stats(&s, 0.1).unwrap();
        assert_eq!(m, 94.5);
        assert_relative_eq!(sd, (99.0f64 / 12.0).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn agent_roles() {
        let mut cfg = ExperimentConfig::new(GameVariant::Simultaneous, 1, 100, 0).unwrap();
        cfg.agent_r = AgentKind::Greedy;
        assert!(cfg.validate().is_err());
        cfg.agent_r = AgentKind::Tabular;
        cfg.grid = GridSpec::new(9, 10.0, 60.0, 1).unwrap();
        assert!(run_experiment(&cfg).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        for variant in [GameVariant::Sequential, GameVariant::Simultaneous, GameVariant::Blind] {
            let cfg = ExperimentConfig::new(variant, 2, 20_000, 7).unwrap();
            let mut a = run_experiment(&cfg).unwrap();
            let mut b = run_experiment(&cfg).unwrap();
            a.wall_clock_s = 0.0;
            b.wall_clock_s = 0.0;
            assert_eq!(a, b);
            assert_eq!(a.rewards.len(), 20_000);
            assert_eq!(a.q_r, b.q_r);
            assert!((a.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn key_values_round_trip() {
        let mut cfg = ExperimentConfig::new(GameVariant::Blind, 2, 3000, 5).unwrap();
        cfg.agent_j = AgentKind::Mixed;
        cfg.deep.hidden = vec![8, 4];
        let mut back = ExperimentConfig::new(GameVariant::Sequential, 1, 10, 0).unwrap();
        back.apply(&cfg.to_key_values()).unwrap();
        assert_eq!(back, cfg);
    }
}
