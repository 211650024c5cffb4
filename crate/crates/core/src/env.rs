//! Discrete mobility environment for the three dynamic games.
//!
//! Positions are `N` equally spaced coordinates of `[L, M]`; each move shifts a
//! player by at most `S` indices. The variants differ in move order and in
//! what a player observes:
//!
//! | variant        | moves         | observation                         |
//! |----------------|---------------|-------------------------------------|
//! | `Sequential`   | alternating   | both current positions              |
//! | `Simultaneous` | simultaneous  | own current, opponent's previous    |
//! | `Blind`        | simultaneous  | own position only                   |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, PositionPair, ScenarioConfig};
use crate::error::{Error, Result};
use crate::Player;

/// Equally spaced positions `L, L+Δ, …, M` with per-move reach `max_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_positions: usize,
    pub l: f64,
    pub m: f64,
    pub max_step: usize,
}

impl GridSpec {
    pub fn new(n_positions: usize, l: f64, m: f64, max_step: usize) -> Result<Self> {
        let g = Self {
            n_positions,
            l,
            m,
            max_step,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_positions < 2 {
            return Err(Error::InvalidConfig(format!("need at least 2 positions, got {}", self.n_positions)));
        }
        if !(self.l > 0.0 && self.l < self.m && self.m.is_finite()) {
            return Err(Error::InvalidConfig(format!("need 0 < L < M, got [{}, {}]", self.l, self.m)));
        }
        if self.max_step < 1 {
            return Err(Error::InvalidConfig("max step must be at least 1".into()));
        }
        Ok(())
    }

    /// Grid spacing Δ = (M − L)/(N − 1).
    pub fn spacing(&self) -> f64 {
        (self.m - self.l) / (self.n_positions - 1) as f64
    }

    /// Coordinate of index `i`; the last index maps to `M` exactly.
    pub fn position(&self, i: usize) -> f64 {
        if i + 1 == self.n_positions {
            self.m
        } else {
            self.l + i as f64 * self.spacing()
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_positions).map(|i| self.position(i)).collect()
    }

    pub fn nearest_index(&self, coord: f64) -> usize {
        let k = ((coord - self.l) / self.spacing()).round();
        k.clamp(0.0, (self.n_positions - 1) as f64) as usize
    }

    pub fn legal_actions(&self, pos: usize) -> Vec<Action> {
        legal_actions(pos, self)
    }

    /// Σ over positions of the number of legal moves.
    pub fn state_action_count(&self) -> usize {
        (0..self.n_positions).map(|i| legal_actions(i, self).len()).sum()
    }
}

/// Index displacement of one move; `|delta| ≤ S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Action {
    pub delta: i32,
}

impl Action {
    pub const STAY: Action = Action { delta: 0 };

    pub fn new(delta: i32) -> Self {
        Self { delta }
    }

    /// Column of this action in fixed-width outputs of `2S + 1` entries.
    pub fn slot(self, max_step: usize) -> usize {
        (self.delta + max_step as i32) as usize
    }

    pub fn from_slot(slot: usize, max_step: usize) -> Self {
        Self::new(slot as i32 - max_step as i32)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.delta)
    }
}

/// Moves keeping `pos + delta` inside the grid, in ascending delta order.
pub fn legal_actions(pos: usize, grid: &GridSpec) -> Vec<Action> {
    let s = grid.max_step as i64;
    let last = grid.n_positions as i64 - 1;
    (-s..=s)
        .filter(|d| (0..=last).contains(&(pos as i64 + d)))
        .map(|d| Action::new(d as i32))
        .collect()
}

/// Applies `action` at `pos`, rejecting moves outside the grid or beyond reach.
pub fn apply_action(pos: usize, action: Action, grid: &GridSpec) -> Result<usize> {
    let target = pos as i64 + action.delta as i64;
    if action.delta.unsigned_abs() as usize > grid.max_step || target < 0 || target >= grid.n_positions as i64 {
        return Err(Error::Contract(format!(
            "illegal action {action} at index {pos} (N = {}, S = {})",
            grid.n_positions, grid.max_step
        )));
    }
    Ok(target as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameVariant {
    /// Alternating moves, both positions always known.
    #[serde(rename = "g1")]
    Sequential,
    /// Simultaneous moves, positions revealed after each round.
    #[serde(rename = "g2")]
    Simultaneous,
    /// Simultaneous moves, opponent never observed.
    #[serde(rename = "g3")]
    Blind,
}

impl GameVariant {
    pub fn is_simultaneous(self) -> bool {
        !matches!(self, GameVariant::Sequential)
    }

    pub fn observes_opponent(self) -> bool {
        !matches!(self, GameVariant::Blind)
    }

    pub fn label(self) -> &'static str {
        match self {
            GameVariant::Sequential => "g1",
            GameVariant::Simultaneous => "g2",
            GameVariant::Blind => "g3",
        }
    }
}

impl fmt::Display for GameVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GameVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g1" | "sequential" => Ok(GameVariant::Sequential),
            "g2" | "simultaneous" => Ok(GameVariant::Simultaneous),
            "g3" | "blind" | "incomplete" => Ok(GameVariant::Blind),
            other => Err(Error::InvalidConfig(format!("unknown game `{other}` (expected g1, g2 or g3)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub x_idx: usize,
    pub y_idx: usize,
    pub prev_x_idx: usize,
    pub prev_y_idx: usize,
    /// Next mover; only meaningful for the sequential game.
    pub turn: Player,
    pub t: u64,
}

impl EnvState {
    pub fn new(x_idx: usize, y_idx: usize, turn: Player) -> Self {
        Self {
            x_idx,
            y_idx,
            prev_x_idx: x_idx,
            prev_y_idx: y_idx,
            turn,
            t: 0,
        }
    }

    pub fn position_of(&self, player: Player) -> usize {
        match player {
            Player::Receiver => self.x_idx,
            Player::Jammer => self.y_idx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observation {
    Full { own: usize, opponent: usize },
    OwnOnly { own: usize },
}

impl Observation {
    pub fn own(&self) -> usize {
        match *self {
            Observation::Full { own, .. } | Observation::OwnOnly { own } => own,
        }
    }

    pub fn opponent(&self) -> Option<usize> {
        match *self {
            Observation::Full { opponent, .. } => Some(opponent),
            Observation::OwnOnly { .. } => None,
        }
    }
}

/// Uniform independent start positions; a fair coin picks the first mover.
pub fn reset<R: Rng + ?Sized>(grid: &GridSpec, variant: GameVariant, rng: &mut R) -> EnvState {
    let x = rng.random_range(0..grid.n_positions);
    let y = rng.random_range(0..grid.n_positions);
    let turn = match variant {
        GameVariant::Sequential if rng.random_bool(0.5) => Player::Jammer,
        _ => Player::Receiver,
    };
    EnvState::new(x, y, turn)
}

/// What `player` knows about the state under `variant`.
pub fn observe(state: &EnvState, player: Player, variant: GameVariant) -> Observation {
    let (own, opp_now, opp_prev) = match player {
        Player::Receiver => (state.x_idx, state.y_idx, state.prev_y_idx),
        Player::Jammer => (state.y_idx, state.x_idx, state.prev_x_idx),
    };
    match variant {
        GameVariant::Sequential => Observation::Full { own, opponent: opp_now },
        GameVariant::Simultaneous => Observation::Full { own, opponent: opp_prev },
        GameVariant::Blind => Observation::OwnOnly { own },
    }
}

/// Observation used at decision time: the last resolved positions.
///
/// For the simultaneous game this is `(own, opponent)` after the previous round
/// resolved, the information both players hold before choosing a move.
pub fn decision_view(state: &EnvState, player: Player, variant: GameVariant) -> Observation {
    let own = state.position_of(player);
    match variant {
        GameVariant::Blind => Observation::OwnOnly { own },
        _ => Observation::Full {
            own,
            opponent: state.position_of(player.opponent()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardModel {
    /// Normalized value `|x − y|^α / x^α`.
    Value,
    /// `log2(1 + SNJR)` with fresh shadowing draws every evaluation.
    SpectralEfficiency,
}

impl FromStr for RewardModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(RewardModel::Value),
            "spectral-efficiency" | "se" => Ok(RewardModel::SpectralEfficiency),
            other => Err(Error::InvalidConfig(format!("unknown reward model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward_r: f64,
    pub reward_j: f64,
}

/// Environment instance: grid, physics, reward model and its shadowing stream.
#[derive(Debug, Clone)]
pub struct Environment {
    grid: GridSpec,
    scenario: ScenarioConfig,
    variant: GameVariant,
    reward: RewardModel,
    values: Vec<f64>,
    shadow_rng: ChaCha8Rng,
}

impl Environment {
    pub fn new(
        grid: GridSpec,
        scenario: ScenarioConfig,
        variant: GameVariant,
        reward: RewardModel,
        shadow_rng: ChaCha8Rng,
    ) -> Result<Self> {
        grid.validate()?;
        scenario.validate()?;
        if grid.l != scenario.l || grid.m != scenario.m {
            return Err(Error::InvalidConfig(format!(
                "grid spans [{}, {}] but scenario spans [{}, {}]",
                grid.l, grid.m, scenario.l, scenario.m
            )));
        }
        let n = grid.n_positions;
        let mut values = Vec::with_capacity(n * n);
        for x in 0..n {
            for y in 0..n {
                values.push(channel::value(grid.position(x), grid.position(y), scenario.alpha)?);
            }
        }
        Ok(Self {
            grid,
            scenario,
            variant,
            reward,
            values,
            shadow_rng,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn variant(&self) -> GameVariant {
        self.variant
    }

    pub fn reward_model(&self) -> RewardModel {
        self.reward
    }

    /// Normalized value at grid indices, without sampling.
    pub fn value_at(&self, x_idx: usize, y_idx: usize) -> f64 {
        self.values[x_idx * self.grid.n_positions + y_idx]
    }

    /// Largest normalized value on the grid.
    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Receiver reward at the given indices under the configured model.
    pub fn receiver_reward(&mut self, x_idx: usize, y_idx: usize) -> Result<f64> {
        match self.reward {
            RewardModel::Value => Ok(self.value_at(x_idx, y_idx)),
            RewardModel::SpectralEfficiency => {
                let pair = PositionPair {
                    x: self.grid.position(x_idx),
                    y: self.grid.position(y_idx),
                };
                channel::spectral_efficiency(pair, &self.scenario, &mut self.shadow_rng)
            }
        }
    }

    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        reset(&self.grid, self.variant, rng)
    }

    /// One half-turn of the sequential game. Both players are credited.
    pub fn step_sequential(&mut self, state: &EnvState, action: Action) -> Result<StepOutcome> {
        if self.variant != GameVariant::Sequential {
            return Err(Error::Contract(format!("sequential step in game {}", self.variant)));
        }
        let mut next = *state;
        next.prev_x_idx = state.x_idx;
        next.prev_y_idx = state.y_idx;
        match state.turn {
            Player::Receiver => next.x_idx = apply_action(state.x_idx, action, &self.grid)?,
            Player::Jammer => next.y_idx = apply_action(state.y_idx, action, &self.grid)?,
        }
        next.turn = state.turn.opponent();
        next.t += 1;
        self.outcome(next)
    }

    /// One round of a simultaneous game; both moves resolve atomically.
    pub fn step_simultaneous(&mut self, state: &EnvState, action_r: Action, action_j: Action) -> Result<StepOutcome> {
        if !self.variant.is_simultaneous() {
            return Err(Error::Contract(format!("simultaneous step in game {}", self.variant)));
        }
        let x = apply_action(state.x_idx, action_r, &self.grid)?;
        let y = apply_action(state.y_idx, action_j, &self.grid)?;
        let next = EnvState {
            x_idx: x,
            y_idx: y,
            prev_x_idx: state.x_idx,
            prev_y_idx: state.y_idx,
            turn: state.turn,
            t: state.t + 1,
        };
        self.outcome(next)
    }

    fn outcome(&mut self, state: EnvState) -> Result<StepOutcome> {
        let reward_r = self.receiver_reward(state.x_idx, state.y_idx)?;
        Ok(StepOutcome {
            state,
            reward_r,
            reward_j: -reward_r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::SeedableRng;

    fn nine_point_grid(s: usize) -> GridSpec {
        GridSpec::new(9, 10.0, 50.0, s).unwrap()
    }

    fn env(variant: GameVariant, s: usize) -> Environment {
        let grid = nine_point_grid(s);
        let cfg = ScenarioConfig::noiseless(10.0, 50.0, 2.0).unwrap();
        Environment::new(grid, cfg, variant, RewardModel::Value, stream_rng(0, Stream::Shadowing)).unwrap()
    }

    fn deltas(v: Vec<Action>) -> Vec<i32> {
        v.into_iter().map(|a| a.delta).collect()
    }

    #[test]
    fn grid_positions_are_exact() {
        let g = nine_point_grid(2);
        assert_eq!(g.spacing(), 5.0);
        assert_eq!(g.positions(), vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]);
        let odd = GridSpec::new(15, 10.0, 570.0, 1).unwrap();
        assert_eq!(odd.position(14), 570.0);
        assert_eq!(odd.nearest_index(16.0), 0);
        assert_eq!(odd.nearest_index(1e6), 14);
        assert!(GridSpec::new(1, 10.0, 50.0, 1).is_err());
        assert!(GridSpec::new(9, 10.0, 50.0, 0).is_err());
    }

    #[test]
    fn legal_action_examples() {
        let g = nine_point_grid(2);
        assert_eq!(deltas(legal_actions(0, &g)), vec![0, 1, 2]);
        assert_eq!(deltas(legal_actions(1, &g)), vec![-1, 0, 1, 2]);
        assert_eq!(legal_actions(4, &g).len(), 5);
        assert_eq!(deltas(legal_actions(8, &g)), vec![-2, -1, 0]);
        assert_eq!(g.state_action_count(), 39);
        assert_eq!(nine_point_grid(1).state_action_count(), 25);
    }

    #[test]
    fn reset_is_uniform_and_reproducible() {
        let g = nine_point_grid(2);
        let mut rng = stream_rng(11, Stream::Env);
        let n = 100_000;
        let mut counts = vec![0usize; 81];
        let mut r_first = 0usize;
        for _ in 0..n {
            let s = reset(&g, GameVariant::Sequential, &mut rng);
            counts[s.x_idx * 9 + s.y_idx] += 1;
            if s.turn == Player::Receiver {
                r_first += 1;
            }
            assert_eq!(s.t, 0);
        }
        let p = 1.0 / 81.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 4.0 * sigma, "{c}");
        }
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((r_first as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);

        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            assert_eq!(reset(&g, GameVariant::Blind, &mut a), reset(&g, GameVariant::Blind, &mut b));
        }
    }

    #[test]
    fn sequential_step_examples() {
        let mut e = env(GameVariant::Sequential, 2);
        // R at 15 m, J at 10 m, R stays
        let s = EnvState::new(1, 0, Player::Receiver);
        let out = e.step_sequential(&s, Action::STAY).unwrap();
        assert!((out.reward_r - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(out.reward_j, -out.reward_r);
        assert_eq!(out.state.turn, Player::Jammer);

        let out = e.step_sequential(&out.state, Action::new(1)).unwrap();
        assert_eq!(out.state.y_idx, 1);
        assert_eq!(out.reward_r, 0.0);

        let s = EnvState::new(0, 3, Player::Receiver);
        assert!(matches!(e.step_sequential(&s, Action::new(-1)), Err(Error::Contract(_))));
        assert!(e.step_simultaneous(&s, Action::STAY, Action::STAY).is_err());
    }

    #[test]
    fn staying_commutes_across_move_orders() {
        let mut seq = env(GameVariant::Sequential, 1);
        let mut sim = env(GameVariant::Simultaneous, 1);
        let s = EnvState::new(4, 2, Player::Receiver);
        let a = seq.step_sequential(&s, Action::STAY).unwrap();
        let b = seq.step_sequential(&a.state, Action::STAY).unwrap();
        let c = sim.step_simultaneous(&s, Action::STAY, Action::STAY).unwrap();
        assert_eq!((b.state.x_idx, b.state.y_idx), (c.state.x_idx, c.state.y_idx));
        assert_eq!(b.reward_r, c.reward_r);
    }

    #[test]
    fn simultaneous_step_examples() {
        let mut e = env(GameVariant::Simultaneous, 2);
        let s = EnvState::new(2, 0, Player::Receiver);
        let out = e.step_simultaneous(&s, Action::STAY, Action::STAY).unwrap();
        assert!((out.reward_r - 0.25).abs() < 1e-15);

        // players may swap cells in one round
        let s = EnvState::new(3, 4, Player::Receiver);
        let out = e.step_simultaneous(&s, Action::new(1), Action::new(-1)).unwrap();
        assert_eq!((out.state.x_idx, out.state.y_idx), (4, 3));
        assert!(out.reward_r > 0.0);
        assert_eq!((out.state.prev_x_idx, out.state.prev_y_idx), (3, 4));

        let out = e.step_simultaneous(&s, Action::new(1), Action::STAY).unwrap();
        assert_eq!(out.reward_r, 0.0);
        assert!(e.step_simultaneous(&s, Action::new(5), Action::STAY).is_err());
        assert!(e.step_sequential(&s, Action::STAY).is_err());
    }

    #[test]
    fn observations_per_variant() {
        let mut s = EnvState::new(3, 7, Player::Receiver);
        s.prev_x_idx = 2;
        s.prev_y_idx = 6;
        assert_eq!(observe(&s, Player::Receiver, GameVariant::Sequential), Observation::Full { own: 3, opponent: 7 });
        assert_eq!(observe(&s, Player::Jammer, GameVariant::Sequential), Observation::Full { own: 7, opponent: 3 });
        assert_eq!(observe(&s, Player::Receiver, GameVariant::Simultaneous), Observation::Full { own: 3, opponent: 6 });
        assert_eq!(observe(&s, Player::Jammer, GameVariant::Simultaneous), Observation::Full { own: 7, opponent: 2 });
        for p in [Player::Receiver, Player::Jammer] {
            let o = observe(&s, p, GameVariant::Blind);
            assert_eq!(o.opponent(), None);
            assert_eq!(o.own(), s.position_of(p));
        }
        assert_eq!(decision_view(&s, Player::Jammer, GameVariant::Simultaneous), Observation::Full { own: 7, opponent: 3 });
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("g1".parse::<GameVariant>().unwrap(), GameVariant::Sequential);
        assert_eq!("G3".parse::<GameVariant>().unwrap(), GameVariant::Blind);
        assert!("g4".parse::<GameVariant>().is_err());
    }

    #[test]
    fn environment_rejects_mismatched_span() {
        let cfg = ScenarioConfig::noiseless(10.0, 60.0, 2.0).unwrap();
        let r = Environment::new(nine_point_grid(1), cfg, GameVariant::Blind, RewardModel::Value, stream_rng(0, Stream::Shadowing));
        assert!(r.is_err());
    }
}
