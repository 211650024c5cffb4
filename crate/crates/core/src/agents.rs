//! Tabular Q-learning with ε-greedy exploration, and scripted jammer policies.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{legal_actions, Action, GameVariant, GridSpec, Observation};
use crate::error::{Error, Result};

const TABLE_HEADER: &str = "# mobjam q-table v1";

/// Hyperparameters of one learning player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub eps_min: f64,
    pub total_steps: u64,
    /// Step at which ε reaches `eps_min`.
    pub decay_horizon: u64,
}

impl LearningConfig {
    /// Tabular defaults per game: learning rates 1e-4 / 5e-2 / 1e-2, γ = 0.99,
    /// ε floor 0.01 reached after two thirds of the run.
    pub fn tabular(variant: GameVariant, total_steps: u64) -> Self {
        let learning_rate = match variant {
            GameVariant::Sequential => 1e-4,
            GameVariant::Simultaneous => 5e-2,
            GameVariant::Blind => 1e-2,
        };
        Self {
            learning_rate,
            discount: 0.99,
            eps_min: 0.01,
            total_steps,
            decay_horizon: default_decay_horizon(total_steps),
        }
    }

    /// Deep-agent defaults: a single learning rate of 1e-4.
    pub fn deep(total_steps: u64) -> Self {
        Self {
            learning_rate: 1e-4,
            ..Self::tabular(GameVariant::Simultaneous, total_steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be in (0, 1], got {}", self.learning_rate)));
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidConfig(format!("discount must be in [0, 1), got {}", self.discount)));
        }
        if !(self.eps_min > 0.0 && self.eps_min < 1.0) {
            return Err(Error::InvalidConfig(format!("eps_min must be in (0, 1), got {}", self.eps_min)));
        }
        if self.decay_horizon == 0 || self.decay_horizon > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "decay horizon {} must be in [1, total steps = {}]",
                self.decay_horizon, self.total_steps
            )));
        }
        Ok(())
    }
}

pub fn default_decay_horizon(total_steps: u64) -> u64 {
    (total_steps * 2 / 3).max(1)
}

/// `max(ε_min, 1/cosh(β·t))` with `β = arccosh(1/ε_min)/T_d`, so that ε(0) = 1
/// and ε(T_d) = ε_min.
pub fn epsilon_schedule(t: u64, cfg: &LearningConfig) -> f64 {
    let beta = (1.0 / cfg.eps_min).acosh() / cfg.decay_horizon as f64;
    // cosh overflows to +inf for large arguments, which maps to 0 and then the floor
    (1.0 / (beta * t as f64).cosh()).clamp(cfg.eps_min, 1.0)
}

/// Which part of the state a table is indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateSpace {
    /// `(own, opponent)` positions.
    Joint,
    /// Own position only.
    OwnOnly,
}

impl StateSpace {
    pub fn for_variant(variant: GameVariant) -> Self {
        if variant.observes_opponent() {
            StateSpace::Joint
        } else {
            StateSpace::OwnOnly
        }
    }

    fn label(self) -> &'static str {
        match self {
            StateSpace::Joint => "joint",
            StateSpace::OwnOnly => "own-only",
        }
    }
}

/// Action values for every legal `(state, action)` pair; zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    grid: GridSpec,
    space: StateSpace,
    /// Legal moves per own position.
    moves: Vec<Vec<Action>>,
    values: Vec<Vec<f64>>,
}

impl QTable {
    pub fn new(grid: GridSpec, space: StateSpace) -> Self {
        let n = grid.n_positions;
        let moves: Vec<Vec<Action>> = (0..n).map(|i| legal_actions(i, &grid)).collect();
        let n_states = match space {
            StateSpace::Joint => n * n,
            StateSpace::OwnOnly => n,
        };
        let values = (0..n_states)
            .map(|s| vec![0.0; moves[Self::own_of(space, n, s)].len()])
            .collect();
        Self {
            grid,
            space,
            moves,
            values,
        }
    }

    fn own_of(space: StateSpace, n: usize, state: usize) -> usize {
        match space {
            StateSpace::Joint => state / n,
            StateSpace::OwnOnly => state,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    /// Number of stored `(state, action)` entries.
    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_index(&self, obs: &Observation) -> Result<usize> {
        let n = self.grid.n_positions;
        let own = obs.own();
        if own >= n {
            return Err(Error::Contract(format!("own position {own} outside grid of {n}")));
        }
        match (self.space, obs.opponent()) {
            (StateSpace::Joint, Some(opp)) if opp < n => Ok(own * n + opp),
            (StateSpace::Joint, _) => Err(Error::Contract(format!("joint table needs a valid opponent position, got {obs:?}"))),
            (StateSpace::OwnOnly, _) => Ok(own),
        }
    }

    /// Legal moves and their values in state `obs`, aligned.
    pub fn row(&self, obs: &Observation) -> Result<(&[Action], &[f64])> {
        let s = self.state_index(obs)?;
        Ok((&self.moves[obs.own()], &self.values[s]))
    }

    fn slot(&self, obs: &Observation, action: Action) -> Result<(usize, usize)> {
        let s = self.state_index(obs)?;
        let k = self.moves[obs.own()]
            .iter()
            .position(|&a| a == action)
            .ok_or_else(|| Error::Contract(format!("action {action} is not legal in {obs:?}")))?;
        Ok((s, k))
    }

    pub fn get(&self, obs: &Observation, action: Action) -> Result<f64> {
        let (s, k) = self.slot(obs, action)?;
        Ok(self.values[s][k])
    }

    pub fn set(&mut self, obs: &Observation, action: Action, value: f64) -> Result<()> {
        let (s, k) = self.slot(obs, action)?;
        self.values[s][k] = value;
        Ok(())
    }

    /// Iterates `(state index, action, value)` over every entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, Action, f64)> + '_ {
        let n = self.grid.n_positions;
        self.values.iter().enumerate().flat_map(move |(s, row)| {
            let own = Self::own_of(self.space, n, s);
            row.iter().zip(&self.moves[own]).map(move |(&v, &a)| (s, a, v))
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.entries()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, _, v)| (lo.min(v), hi.max(v)))
    }

    /// Flat text: a header, then one `own opponent delta value` line per entry
    /// (`-` as opponent for own-only tables).
    pub fn to_text(&self) -> String {
        let n = self.grid.n_positions;
        let mut out = String::new();
        let _ = writeln!(out, "{TABLE_HEADER}");
        let _ = writeln!(
            out,
            "# space={} n_positions={} max_step={} l={} m={}",
            self.space.label(),
            n,
            self.grid.max_step,
            self.grid.l,
            self.grid.m
        );
        for (s, a, v) in self.entries() {
            match self.space {
                StateSpace::Joint => {
                    let _ = writeln!(out, "{} {} {} {v:?}", s / n, s % n, a.delta);
                }
                StateSpace::OwnOnly => {
                    let _ = writeln!(out, "{s} - {} {v:?}", a.delta);
                }
            }
        }
        out
    }

    /// Reads values written by [`to_text`](Self::to_text) into a table of the given shape.
    pub fn from_text(grid: GridSpec, space: StateSpace, text: &str) -> Result<Self> {
        let mut table = Self::new(grid, space);
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TABLE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing `{TABLE_HEADER}` header"),
                })
            }
        }
        let expected = format!("# space={} n_positions={} max_step={}", space.label(), grid.n_positions, grid.max_step);
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if line.starts_with("# space=") && !line.starts_with(&expected) {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("table shape `{line}` does not match `{expected}`"),
                    });
                }
                continue;
            }
            let bad = |message: String| Error::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            }
            let own: usize = fields[0].parse().map_err(|e| bad(format!("own position: {e}")))?;
            let delta: i32 = fields[2].parse().map_err(|e| bad(format!("delta: {e}")))?;
            let value: f64 = fields[3].parse().map_err(|e| bad(format!("value: {e}")))?;
            let obs = match (space, fields[1]) {
                (StateSpace::OwnOnly, "-") => Observation::OwnOnly { own },
                (StateSpace::Joint, opp) => Observation::Full {
                    own,
                    opponent: opp.parse().map_err(|e| bad(format!("opponent position: {e}")))?,
                },
                (StateSpace::OwnOnly, other) => return Err(bad(format!("own-only table got opponent `{other}`"))),
            };
            table.set(&obs, Action::new(delta), value).map_err(|e| bad(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(grid: GridSpec, space: StateSpace, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(grid, space, &text)
    }
}

/// `Q(s,a) ← (1−ℓ)·Q(s,a) + ℓ·(r + γ·max_a' Q(s',a'))`, the max over moves legal in `s'`.
pub fn q_update(
    table: &mut QTable,
    s: &Observation,
    a: Action,
    reward: f64,
    s_next: &Observation,
    cfg: &LearningConfig,
) -> Result<()> {
    let target = reward + cfg.discount * state_value(table, s_next)?;
    let (si, k) = table.slot(s, a)?;
    let q = &mut table.values[si][k];
    *q = (1.0 - cfg.learning_rate) * *q + cfg.learning_rate * target;
    Ok(())
}

/// Index of the first maximum; ties go to the lowest delta since moves are sorted.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

pub fn greedy_action(table: &QTable, s: &Observation) -> Result<Action> {
    let (moves, values) = table.row(s)?;
    Ok(moves[argmax(values)])
}

pub fn state_value(table: &QTable, s: &Observation) -> Result<f64> {
    let (_, values) = table.row(s)?;
    Ok(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Greedy with probability `1 − ε`, uniform over legal moves otherwise.
pub fn epsilon_greedy<R: Rng + ?Sized>(table: &QTable, s: &Observation, epsilon: f64, rng: &mut R) -> Result<Action> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Domain(format!("epsilon must be in [0, 1], got {epsilon}")));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let (moves, _) = table.row(s)?;
        return Ok(*moves.choose(rng).expect("every position has a legal move"));
    }
    greedy_action(table, s)
}

pub fn random_action<R: Rng + ?Sized>(pos: usize, grid: &GridSpec, rng: &mut R) -> Action {
    *legal_actions(pos, grid).choose(rng).expect("every position has a legal move")
}

/// Stays on the receiver's cell, otherwise closes in by up to `S` cells without overshooting.
pub fn greedy_jammer(y_idx: usize, x_idx: usize, grid: &GridSpec) -> Action {
    let gap = x_idx as i64 - y_idx as i64;
    let reach = grid.max_step as i64;
    Action::new(gap.clamp(-reach, reach) as i32)
}

/// Randomized jammer moving one cell at a time:
/// on the receiver's cell it stays or backs off toward the access point with
/// equal probability; when closer to the access point than the receiver it
/// stays or advances with equal probability; otherwise it retreats toward the
/// access point.
pub fn mixed_jammer<R: Rng + ?Sized>(y_idx: usize, x_idx: usize, grid: &GridSpec, rng: &mut R) -> Action {
    let backward = if y_idx > 0 { Action::new(-1) } else { Action::STAY };
    let forward = if y_idx + 1 < grid.n_positions { Action::new(1) } else { Action::STAY };
    let coin = rng.random_bool(0.5);
    match y_idx.cmp(&x_idx) {
        std::cmp::Ordering::Equal => {
            if coin {
                Action::STAY
            } else {
                backward
            }
        }
        std::cmp::Ordering::Less => {
            if coin {
                Action::STAY
            } else {
                forward
            }
        }
        std::cmp::Ordering::Greater => backward,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(s: usize) -> GridSpec {
        GridSpec::new(9, 10.0, 50.0, s).unwrap()
    }

    fn full(own: usize, opponent: usize) -> Observation {
        Observation::Full { own, opponent }
    }

    fn cfg(lr: f64, gamma: f64) -> LearningConfig {
        LearningConfig {
            learning_rate: lr,
            discount: gamma,
            eps_min: 0.01,
            total_steps: 3000,
            decay_horizon: 2000,
        }
    }

    #[test]
    fn table_sizes() {
        assert_eq!(QTable::new(grid(2), StateSpace::OwnOnly).len(), 39);
        assert_eq!(QTable::new(grid(2), StateSpace::Joint).len(), 9 * 39);
        assert_eq!(QTable::new(grid(2), StateSpace::Joint).n_states(), 81);
    }

    #[test]
    fn q_update_examples() {
        let mut t = QTable::new(grid(1), StateSpace::Joint);
        let s = full(4, 2);
        let s2 = full(5, 2);
        t.set(&s2, Action::new(1), 2.0).unwrap();
        q_update(&mut t, &s, Action::new(1), 1.0, &s2, &cfg(0.5, 0.99)).unwrap();
        assert_relative_eq!(t.get(&s, Action::new(1)).unwrap(), 1.49, max_relative = 1e-15);

        let mut t = QTable::new(grid(1), StateSpace::Joint);
        q_update(&mut t, &s, Action::STAY, 0.0, &s2, &cfg(0.5, 0.99)).unwrap();
        assert_eq!(t.get(&s, Action::STAY).unwrap(), 0.0);

        t.set(&s2, Action::STAY, 7.0).unwrap();
        q_update(&mut t, &s, Action::STAY, 0.3, &s2, &cfg(1.0, 0.0)).unwrap();
        assert_eq!(t.get(&s, Action::STAY).unwrap(), 0.3);
    }

    #[test]
    fn q_update_touches_one_entry() {
        let mut t = QTable::new(grid(2), StateSpace::Joint);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (s, a, _) in t.clone().entries() {
            let own = s / 9;
            t.set(&full(own, s % 9), a, rng.random()).unwrap();
        }
        let before = t.clone();
        let s = full(3, 3);
        q_update(&mut t, &s, Action::new(-2), 0.7, &full(1, 4), &cfg(0.3, 0.9)).unwrap();
        let changed: Vec<_> = before
            .entries()
            .zip(t.entries())
            .filter(|(a, b)| a.2.to_bits() != b.2.to_bits())
            .map(|(a, _)| (a.0, a.1))
            .collect();
        assert_eq!(changed, vec![(3 * 9 + 3, Action::new(-2))]);
    }

    #[test]
    fn unknown_pairs_are_rejected() {
        let mut t = QTable::new(grid(2), StateSpace::Joint);
        assert!(q_update(&mut t, &full(0, 0), Action::new(-1), 1.0, &full(0, 0), &cfg(0.1, 0.9)).is_err());
        assert!(t.get(&Observation::OwnOnly { own: 0 }, Action::STAY).is_err());
        assert!(t.get(&full(9, 0), Action::STAY).is_err());
    }

    #[test]
    fn greedy_examples() {
        let mut t = QTable::new(grid(1), StateSpace::OwnOnly);
        let s = Observation::OwnOnly { own: 4 };
        t.set(&s, Action::STAY, 0.1).unwrap();
        t.set(&s, Action::new(1), 0.5).unwrap();
        t.set(&s, Action::new(-1), 0.2).unwrap();
        assert_eq!(greedy_action(&t, &s).unwrap(), Action::new(1));
        assert_eq!(state_value(&t, &s).unwrap(), 0.5);

        let t2 = QTable::new(grid(2), StateSpace::OwnOnly);
        assert_eq!(greedy_action(&t2, &Observation::OwnOnly { own: 4 }).unwrap(), Action::new(-2));
        assert_eq!(greedy_action(&t2, &Observation::OwnOnly { own: 1 }).unwrap(), Action::new(-1));
        assert_eq!(state_value(&t2, &Observation::OwnOnly { own: 1 }).unwrap(), 0.0);

        let single = GridSpec::new(2, 1.0, 2.0, 1).unwrap();
        let mut t3 = QTable::new(single, StateSpace::OwnOnly);
        t3.set(&Observation::OwnOnly { own: 0 }, Action::new(1), -3.0).unwrap();
        assert_eq!(greedy_action(&t3, &Observation::OwnOnly { own: 0 }).unwrap(), Action::STAY);
    }

    #[test]
    fn epsilon_schedule_fixtures() {
        let c = LearningConfig {
            total_steps: 3000,
            decay_horizon: 2000,
            ..cfg(0.1, 0.99)
        };
        assert_eq!(epsilon_schedule(0, &c), 1.0);
        assert_relative_eq!(epsilon_schedule(2000, &c), 0.01, max_relative = 1e-12);
        assert_relative_eq!(epsilon_schedule(1000, &c), 0.1407195089460584, max_relative = 1e-12);
        assert_eq!(epsilon_schedule(u64::MAX, &c), 0.01);
        let mut prev = 1.0;
        for t in (0..3000).step_by(7) {
            let e = epsilon_schedule(t, &c);
            assert!(e <= prev && e >= 0.01);
            prev = e;
        }
    }

    #[test]
    fn epsilon_greedy_behaviour() {
        let mut t = QTable::new(grid(2), StateSpace::OwnOnly);
        let s = Observation::OwnOnly { own: 4 };
        t.set(&s, Action::new(2), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&t, &s, 0.0, &mut rng).unwrap(), Action::new(2));
        }
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[epsilon_greedy(&t, &s, 1.0, &mut rng).unwrap().slot(2)] += 1;
        }
        let sigma = (n as f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.2).abs() < 3.0 * sigma, "{counts:?}");
        }
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| epsilon_greedy(&t, &s, 0.5, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert!(epsilon_greedy(&t, &s, 1.5, &mut rng).is_err());
    }

    #[test]
    fn greedy_jammer_examples() {
        let g = grid(2);
        assert_eq!(greedy_jammer(3, 3, &g), Action::STAY);
        assert_eq!(greedy_jammer(2, 6, &g), Action::new(2));
        assert_eq!(greedy_jammer(5, 4, &g), Action::new(-1));
        for y in 0..9 {
            for x in 0..9 {
                let a = greedy_jammer(y, x, &g);
                let ny = crate::env::apply_action(y, a, &g).unwrap();
                assert!(ny.abs_diff(x) <= y.abs_diff(x));
            }
        }
    }

    #[test]
    fn mixed_jammer_frequencies() {
        let g = grid(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let sigma = (n as f64 * 0.25).sqrt();
        let stays = (0..n).filter(|_| mixed_jammer(4, 4, &g, &mut rng) == Action::STAY).count();
        assert!((stays as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
        for _ in 0..1000 {
            let a = mixed_jammer(4, 4, &g, &mut rng);
            assert!(a == Action::STAY || a == Action::new(-1));
            let a = mixed_jammer(2, 6, &g, &mut rng);
            assert!(a == Action::STAY || a == Action::new(1));
            assert_eq!(mixed_jammer(6, 2, &g, &mut rng), Action::new(-1));
        }
        let forward = (0..n).filter(|_| mixed_jammer(2, 6, &g, &mut rng) == Action::new(1)).count();
        assert!((forward as f64 - n as f64 / 2.0).abs() < 3.0 * sigma);
        // at the access-point end backing off is impossible
        assert_eq!(mixed_jammer(0, 0, &g, &mut rng), Action::STAY);
    }

    #[test]
    fn text_format_round_trips() {
        let mut t = QTable::new(grid(2), StateSpace::Joint);
        t.set(&full(0, 8), Action::new(2), 0.1 + 0.2).unwrap();
        t.set(&full(8, 0), Action::new(-2), -1e-300).unwrap();
        let back = QTable::from_text(grid(2), StateSpace::Joint, &t.to_text()).unwrap();
        assert_eq!(back, t);
        assert!(QTable::from_text(grid(1), StateSpace::Joint, &t.to_text()).is_err());
        assert!(QTable::from_text(grid(2), StateSpace::OwnOnly, &t.to_text()).is_err());
        assert!(QTable::from_text(grid(2), StateSpace::Joint, "garbage").is_err());

        let own = QTable::new(grid(1), StateSpace::OwnOnly);
        let text = own.to_text();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 25);
        assert_eq!(QTable::from_text(grid(1), StateSpace::OwnOnly, &text).unwrap(), own);
    }

    #[test]
    fn learning_config_validation() {
        assert!(LearningConfig::tabular(GameVariant::Sequential, 1500).validate().is_ok());
        let bad = LearningConfig {
            decay_horizon: 2000,
            ..LearningConfig::tabular(GameVariant::Sequential, 1500)
        };
        assert!(bad.validate().is_err());
        let bad = LearningConfig {
            discount: 1.0,
            ..LearningConfig::tabular(GameVariant::Blind, 1500)
        };
        assert!(bad.validate().is_err());
    }
}
