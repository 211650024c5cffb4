//! Reference solvers: matrix games (fictitious play and an exact simplex
//! solver), minimax value iteration for the alternating-move game and Shapley
//! value iteration for the simultaneous-move game.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::value;
use crate::env::{apply_action, legal_actions, Action, GridSpec};
use crate::error::{Error, Result};

/// Receiver payoffs: rows are receiver pure strategies, columns jammer pure strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Domain("payoff matrix needs at least one row and one column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Domain(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("payoff entries must be finite, got {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Domain("ragged payoff matrix".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let data = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Self::new(rows, cols, data)
    }

    /// `|x−y|^α / x^α` over the same set of candidate positions for both players.
    pub fn static_game(positions: &[f64], alpha: f64) -> Result<Self> {
        let mut data = Vec::with_capacity(positions.len() * positions.len());
        for &x in positions {
            for &y in positions {
                data.push(value(x, y, alpha)?);
            }
        }
        Self::new(positions.len(), positions.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Solution of a matrix game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSolution {
    pub value: f64,
    /// What the row strategy guarantees against every column.
    pub lower: f64,
    /// What the column strategy concedes against every row.
    pub upper: f64,
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
    pub iterations: usize,
}

impl MatrixSolution {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Play counts carried between fictitious-play invocations on slowly changing matrices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayCounts {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn argmin_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = k;
        }
    }
    best
}

fn mat_vec(m: &PayoffMatrix, q: &[f64]) -> Vec<f64> {
    (0..m.rows).map(|i| m.row(i).iter().zip(q).map(|(a, b)| a * b).sum()).collect()
}

fn vec_mat(p: &[f64], m: &PayoffMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for (i, &pi) in p.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(m.row(i)) {
            *o += pi * a;
        }
    }
    out
}

/// Bounds certified by a pair of mixed strategies.
pub fn strategy_bounds(m: &PayoffMatrix, row: &[f64], col: &[f64]) -> (f64, f64) {
    let lower = vec_mat(row, m).into_iter().fold(f64::INFINITY, f64::min);
    let upper = mat_vec(m, col).into_iter().fold(f64::NEG_INFINITY, f64::max);
    (lower.min(upper), lower.max(upper))
}

/// Alternating fictitious play: each round the receiver best-responds to the
/// jammer's empirical mixture, then the jammer to the receiver's updated one.
/// The returned value is the midpoint of the bounds certified by the
/// empirical strategies.
pub fn fictitious_play(m: &PayoffMatrix, iters: usize) -> Result<MatrixSolution> {
    fictitious_play_warm(m, iters, None).map(|(s, _)| s)
}

/// [`fictitious_play`] continuing from earlier play counts.
pub fn fictitious_play_warm(m: &PayoffMatrix, iters: usize, warm: Option<&PlayCounts>) -> Result<(MatrixSolution, PlayCounts)> {
    if iters == 0 {
        return Err(Error::Domain("fictitious play needs at least one iteration".into()));
    }
    let mut counts = match warm {
        Some(c) if c.rows.len() == m.rows && c.cols.len() == m.cols => c.clone(),
        _ => PlayCounts {
            rows: vec![0.0; m.rows],
            cols: vec![0.0; m.cols],
        },
    };
    // cumulative payoff of each row against the jammer's plays, and of each column against the receiver's
    let mut row_payoffs = mat_vec(m, &counts.cols);
    let mut col_payoffs = vec_mat(&counts.rows, m);
    for _ in 0..iters {
        let i = argmax_first(&row_payoffs);
        counts.rows[i] += 1.0;
        for (c, a) in col_payoffs.iter_mut().zip(m.row(i)) {
            *c += a;
        }
        let j = argmin_first(&col_payoffs);
        counts.cols[j] += 1.0;
        for (r, rp) in row_payoffs.iter_mut().enumerate() {
            *rp += m.get(r, j);
        }
    }
    let normalize = |c: &[f64]| {
        let total: f64 = c.iter().sum();
        c.iter().map(|v| v / total).collect::<Vec<_>>()
    };
    let row_strategy = normalize(&counts.rows);
    let col_strategy = normalize(&counts.cols);
    let (lower, upper) = strategy_bounds(m, &row_strategy, &col_strategy);
    Ok((
        MatrixSolution {
            value: 0.5 * (lower + upper),
            lower,
            upper,
            row_strategy,
            col_strategy,
            iterations: iters,
        },
        counts,
    ))
}

const PIVOT_EPS: f64 = 1e-12;

/// Exact solution through the simplex method with Bland's pivoting rule.
///
/// The payoffs are shifted to be positive, then
/// `max Σq' s.t. B q' ≤ 1, q' ≥ 0` gives the column strategy and its dual
/// the row strategy, with game value `1/Σq'` minus the shift.
pub fn solve_matrix_game(m: &PayoffMatrix) -> Result<MatrixSolution> {
    let (rows, cols) = (m.rows, m.cols);
    let lo = m.data.iter().cloned().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - lo;
    // tableau: `rows` constraint lines then the objective line; columns are q', slacks, rhs
    let width = cols + rows + 1;
    let mut t = vec![0.0; (rows + 1) * width];
    for i in 0..rows {
        for j in 0..cols {
            t[i * width + j] = m.get(i, j) + shift;
        }
        t[i * width + cols + i] = 1.0;
        t[i * width + width - 1] = 1.0;
    }
    for j in 0..cols {
        t[rows * width + j] = -1.0;
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();
    let mut pivots = 0;
    loop {
        let Some(enter) = (0..cols + rows).find(|&j| t[rows * width + j] < -PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let a = t[i * width + enter];
            if a > PIVOT_EPS {
                let ratio = t[i * width + width - 1] / a;
                let better = match leave {
                    None => true,
                    Some((k, r)) => ratio < r - PIVOT_EPS || (ratio <= r + PIVOT_EPS && basis[i] < basis[k]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (pr, _) = leave.ok_or_else(|| Error::Contract("matrix-game linear program is unbounded".into()))?;
        let piv = t[pr * width + enter];
        for v in &mut t[pr * width..(pr + 1) * width] {
            *v /= piv;
        }
        for i in 0..=rows {
            if i == pr {
                continue;
            }
            let f = t[i * width + enter];
            if f != 0.0 {
                for k in 0..width {
                    t[i * width + k] -= f * t[pr * width + k];
                }
            }
        }
        basis[pr] = enter;
        pivots += 1;
        if pivots > 50 * (rows + cols) + 1000 {
            return Err(Error::NoConvergence {
                what: "simplex",
                iterations: pivots,
            });
        }
    }
    let objective = t[rows * width + width - 1];
    let mut col_strategy = vec![0.0; cols];
    for (i, &b) in basis.iter().enumerate() {
        if b < cols {
            col_strategy[b] = t[i * width + width - 1].max(0.0) / objective;
        }
    }
    let row_strategy: Vec<f64> = (0..rows).map(|i| t[rows * width + cols + i].max(0.0) / objective).collect();
    let renorm = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let row_strategy = renorm(row_strategy);
    let col_strategy = renorm(col_strategy);
    let (lower, upper) = strategy_bounds(m, &row_strategy, &col_strategy);
    Ok(MatrixSolution {
        value: 1.0 / objective - shift,
        lower,
        upper,
        row_strategy,
        col_strategy,
        iterations: pivots,
    })
}

/// Receiver payoff `value(x_i, y_j)` for every grid pair, row-major in `x`.
pub fn grid_payoffs(grid: &GridSpec, alpha: f64) -> Result<Vec<f64>> {
    let pos = grid.positions();
    let mut out = Vec::with_capacity(pos.len() * pos.len());
    for &x in &pos {
        for &y in &pos {
            out.push(value(x, y, alpha)?);
        }
    }
    Ok(out)
}

fn check_discount(gamma: f64, tol: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("discount must be in [0, 1), got {gamma}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

fn iteration_cap(gamma: f64, tol: f64, scale: f64) -> usize {
    if gamma == 0.0 {
        return 3;
    }
    let needed = ((tol / scale.max(tol)).ln() / gamma.ln()).ceil();
    needed.max(0.0) as usize * 2 + 100
}

/// Values of the alternating-move game for both movers, indexed `x * n + y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternatingValues {
    pub n: usize,
    pub receiver_to_move: Vec<f64>,
    pub jammer_to_move: Vec<f64>,
    /// Sup-norm change of each sweep.
    pub residuals: Vec<f64>,
}

/// Synchronous minimax value iteration for the alternating-move game:
/// the receiver maximizes and the jammer minimizes `r(s') + γ·V(s')`, where
/// `r` is the receiver payoff of the position pair after the move.
pub fn alternating_minimax_vi(grid: &GridSpec, alpha: f64, gamma: f64, tol: f64) -> Result<AlternatingValues> {
    grid.validate()?;
    check_discount(gamma, tol)?;
    let n = grid.n_positions;
    let r = grid_payoffs(grid, alpha)?;
    let moves: Vec<Vec<usize>> = (0..n)
        .map(|p| legal_actions(p, grid).into_iter().map(|a| apply_action(p, a, grid)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let scale = r.iter().cloned().fold(0.0, f64::max) / (1.0 - gamma);
    let cap = iteration_cap(gamma, tol, scale);
    let mut vr = vec![0.0; n * n];
    let mut vj = vec![0.0; n * n];
    let mut residuals = Vec::new();
    loop {
        let mut nr = vec![0.0; n * n];
        let mut nj = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                nr[x * n + y] = moves[x]
                    .iter()
                    .map(|&x2| r[x2 * n + y] + gamma * vj[x2 * n + y])
                    .fold(f64::NEG_INFINITY, f64::max);
                nj[x * n + y] = moves[y]
                    .iter()
                    .map(|&y2| r[x * n + y2] + gamma * vr[x * n + y2])
                    .fold(f64::INFINITY, f64::min);
            }
        }
        let change = nr
            .iter()
            .zip(&vr)
            .chain(nj.iter().zip(&vj))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        vr = nr;
        vj = nj;
        residuals.push(change);
        if change < tol {
            break;
        }
        if residuals.len() >= cap {
            return Err(Error::NoConvergence {
                what: "alternating minimax value iteration",
                iterations: residuals.len(),
            });
        }
    }
    Ok(AlternatingValues {
        n,
        receiver_to_move: vr,
        jammer_to_move: vj,
        residuals,
    })
}

impl AlternatingValues {
    /// Greedy receiver move at `(x, y)`; ties go to the lowest delta.
    pub fn receiver_policy(&self, x: usize, y: usize, grid: &GridSpec, alpha: f64, gamma: f64) -> Result<Action> {
        let n = self.n;
        let mut best: Option<(Action, f64)> = None;
        for a in legal_actions(x, grid) {
            let x2 = apply_action(x, a, grid)?;
            let q = value(grid.position(x2), grid.position(y), alpha)? + gamma * self.jammer_to_move[x2 * n + y];
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((a, q));
            }
        }
        Ok(best.expect("legal moves are never empty").0)
    }

    /// Greedy jammer move at `(x, y)`; ties go to the lowest delta.
    pub fn jammer_policy(&self, x: usize, y: usize, grid: &GridSpec, alpha: f64, gamma: f64) -> Result<Action> {
        let n = self.n;
        let mut best: Option<(Action, f64)> = None;
        for a in legal_actions(y, grid) {
            let y2 = apply_action(y, a, grid)?;
            let q = value(grid.position(x), grid.position(y2), alpha)? + gamma * self.receiver_to_move[x * n + y2];
            if best.is_none_or(|(_, b)| q < b) {
                best = Some((a, q));
            }
        }
        Ok(best.expect("legal moves are never empty").0)
    }
}

/// Long-run average receiver reward per half-turn when both players follow
/// the greedy policies of `values`, over `episodes × episode_len` half-turns
/// from uniformly drawn starting pairs and first movers.
pub fn alternating_average_reward<R: Rng + ?Sized>(
    values: &AlternatingValues,
    grid: &GridSpec,
    alpha: f64,
    gamma: f64,
    episodes: usize,
    episode_len: usize,
    rng: &mut R,
) -> Result<f64> {
    if episodes == 0 || episode_len == 0 {
        return Err(Error::Domain("need at least one episode of positive length".into()));
    }
    let n = grid.n_positions;
    // the policies are deterministic, so tabulate them once
    let mut pol_r = vec![0usize; n * n];
    let mut pol_j = vec![0usize; n * n];
    for x in 0..n {
        for y in 0..n {
            pol_r[x * n + y] = apply_action(x, values.receiver_policy(x, y, grid, alpha, gamma)?, grid)?;
            pol_j[x * n + y] = apply_action(y, values.jammer_policy(x, y, grid, alpha, gamma)?, grid)?;
        }
    }
    let r = grid_payoffs(grid, alpha)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        let (mut x, mut y) = (rng.random_range(0..n), rng.random_range(0..n));
        let mut receiver_turn = rng.random_bool(0.5);
        for _ in 0..episode_len {
            if receiver_turn {
                x = pol_r[x * n + y];
            } else {
                y = pol_j[x * n + y];
            }
            total += r[x * n + y];
            receiver_turn = !receiver_turn;
        }
    }
    Ok(total / (episodes * episode_len) as f64)
}

/// How each state's matrix game is solved inside Shapley iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageSolver {
    /// Simplex, exact up to rounding.
    #[default]
    Exact,
    /// Fictitious play for the given number of rounds per sweep, warm-started across sweeps.
    FictitiousPlay { iters: usize },
}

pub const DEFAULT_VI_TOL: f64 = 1e-9;
pub const DEFAULT_FP_ITERS: usize = 200_000;

/// Values and stationary strategies of the simultaneous-move game, indexed `x * n + y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyValues {
    pub n: usize,
    pub values: Vec<f64>,
    /// Receiver mixture over its legal moves (ascending delta) in each state.
    pub receiver_strategy: Vec<Vec<f64>>,
    pub jammer_strategy: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Largest bound gap left by the stage solver in the final sweep.
    pub stage_gap: f64,
}

/// Shapley value iteration: `V(s) = val[ r(s') + γ·V(s') ]` with the matrix
/// game over both players' legal moves.
///
/// With a fictitious-play stage solver the residual sequence carries the
/// solver's noise and the iteration stops once the change falls below
/// `max(tol, 2·gap)`; `stage_gap` reports what was left open.
pub fn shapley_vi(grid: &GridSpec, alpha: f64, gamma: f64, tol: f64, solver: StageSolver) -> Result<ShapleyValues> {
    grid.validate()?;
    check_discount(gamma, tol)?;
    if let StageSolver::FictitiousPlay { iters: 0 } = solver {
        return Err(Error::Domain("fictitious play needs at least one iteration".into()));
    }
    let n = grid.n_positions;
    let r = grid_payoffs(grid, alpha)?;
    let moves: Vec<Vec<usize>> = (0..n)
        .map(|p| legal_actions(p, grid).into_iter().map(|a| apply_action(p, a, grid)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let scale = r.iter().cloned().fold(0.0, f64::max) / (1.0 - gamma);
    let cap = iteration_cap(gamma, tol, scale);
    let mut v = vec![0.0; n * n];
    let mut warm: Vec<Option<PlayCounts>> = vec![None; n * n];
    let mut receiver_strategy = vec![Vec::new(); n * n];
    let mut jammer_strategy = vec![Vec::new(); n * n];
    let mut residuals = Vec::new();
    loop {
        let mut next = vec![0.0; n * n];
        let mut gap: f64 = 0.0;
        for x in 0..n {
            for y in 0..n {
                let s = x * n + y;
                let stage = PayoffMatrix::from_fn(moves[x].len(), moves[y].len(), |i, j| {
                    let s2 = moves[x][i] * n + moves[y][j];
                    r[s2] + gamma * v[s2]
                })?;
                let sol = match solver {
                    StageSolver::Exact => solve_matrix_game(&stage)?,
                    StageSolver::FictitiousPlay { iters } => {
                        let (sol, counts) = fictitious_play_warm(&stage, iters, warm[s].as_ref())?;
                        warm[s] = Some(counts);
                        sol
                    }
                };
                gap = gap.max(sol.gap());
                next[s] = sol.value;
                receiver_strategy[s] = sol.row_strategy;
                jammer_strategy[s] = sol.col_strategy;
            }
        }
        let change = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        residuals.push(change);
        let stop = match solver {
            StageSolver::Exact => change < tol,
            StageSolver::FictitiousPlay { .. } => change < tol.max(2.0 * gap),
        };
        if stop {
            return Ok(ShapleyValues {
                n,
                values: v,
                receiver_strategy,
                jammer_strategy,
                residuals,
                stage_gap: gap,
            });
        }
        if residuals.len() >= cap {
            return Err(Error::NoConvergence {
                what: "Shapley value iteration",
                iterations: residuals.len(),
            });
        }
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Long-run average receiver reward per step when both players draw moves
/// from the stationary strategies of `values`.
pub fn simultaneous_average_reward<R: Rng + ?Sized>(
    values: &ShapleyValues,
    grid: &GridSpec,
    alpha: f64,
    episodes: usize,
    episode_len: usize,
    rng: &mut R,
) -> Result<f64> {
    if episodes == 0 || episode_len == 0 {
        return Err(Error::Domain("need at least one episode of positive length".into()));
    }
    let n = grid.n_positions;
    let r = grid_payoffs(grid, alpha)?;
    let moves: Vec<Vec<Action>> = (0..n).map(|p| legal_actions(p, grid)).collect();
    let mut total = 0.0;
    for _ in 0..episodes {
        let (mut x, mut y) = (rng.random_range(0..n), rng.random_range(0..n));
        for _ in 0..episode_len {
            let s = x * n + y;
            let a = moves[x][sample_index(&values.receiver_strategy[s], rng)];
            let b = moves[y][sample_index(&values.jammer_strategy[s], rng)];
            x = apply_action(x, a, grid)?;
            y = apply_action(y, b, grid)?;
            total += r[x * n + y];
        }
    }
    Ok(total / (episodes * episode_len) as f64)
}

/// True when no residual exceeds its predecessor by more than `slack`.
pub fn residuals_nonincreasing(residuals: &[f64], slack: f64) -> bool {
    residuals.windows(2).all(|w| w[1] <= w[0] + slack)
}

/// Writes an `n × n` table as CSV, one line per `x` index.
pub fn table_csv(n: usize, values: &[f64]) -> String {
    let mut out = String::new();
    for x in 0..n {
        let line: Vec<String> = (0..n).map(|y| format!("{:?}", values[x * n + y])).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
