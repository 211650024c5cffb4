//! One-shot game on `[L, M]²`: closed-form equilibrium, numerical equilibrium
//! with thermal noise, best responses, and Stackelberg outcomes.
//!
//! Without noise the payoff is [`value`](crate::channel::value). With noise it
//! is the SNJR scaled by `P_J / P_tx`, which reduces to the same value as the
//! noise vanishes and leaves every best response unchanged.

use serde::{Deserialize, Serialize};

use crate::channel::{self, PositionPair, ScenarioConfig};
use crate::error::{Error, Result};
use crate::Player;

/// Default resolution of the numerical best-response grids.
pub const DEFAULT_GRID_N: usize = 4001;

const MAX_FIXED_POINT_ITERS: usize = 100;
const MAX_BISECTION_ITERS: usize = 400;

/// A distribution over coordinates of `[L, M]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategy {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::Domain(format!(
                "support ({}) and probabilities ({}) must be nonempty and of equal length",
                support.len(),
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Domain("probabilities must be nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { support, probs })
    }

    pub fn pure(x: f64) -> Self {
        Self {
            support: vec![x],
            probs: vec![1.0],
        }
    }

    /// The single coordinate played with certainty, if any.
    pub fn as_pure(&self) -> Option<f64> {
        let mut live = self.support.iter().zip(&self.probs).filter(|(_, &p)| p > 0.0);
        match (live.next(), live.next()) {
            (Some((&x, _)), None) => Some(x),
            _ => None,
        }
    }

    pub fn check_within(&self, cfg: &ScenarioConfig) -> Result<()> {
        match self.support.iter().find(|&&x| x < cfg.l || x > cfg.m) {
            Some(x) => Err(Error::Domain(format!("support point {x} outside [{}, {}]", cfg.l, cfg.m))),
            None => Ok(()),
        }
    }

    /// Expected receiver payoff when the jammer sits at `y`.
    pub fn expected_payoff(&self, y: f64, cfg: &ScenarioConfig) -> Result<f64> {
        let mut total = 0.0;
        for (&x, &p) in self.support.iter().zip(&self.probs) {
            if p > 0.0 {
                total += p * receiver_payoff(x, y, cfg)?;
            }
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEquilibrium {
    pub jammer_pos: f64,
    pub receiver_strategy: MixedStrategy,
    pub game_value: f64,
}

impl StaticEquilibrium {
    /// Probability the receiver places on the coordinate closest to the access point.
    pub fn near_probability(&self) -> f64 {
        self.receiver_strategy.probs[0]
    }

    /// The far end of the receiver's support (`M` without noise, `W` with noise).
    pub fn far_point(&self) -> f64 {
        *self.receiver_strategy.support.last().expect("nonempty support")
    }
}

/// Receiver payoff of the static game.
pub fn receiver_payoff(x: f64, y: f64, cfg: &ScenarioConfig) -> Result<f64> {
    if cfg.is_noiseless() {
        channel::value(x, y, cfg.alpha)
    } else {
        let power_ratio = channel::dbm_to_mw(cfg.p_j_dbm) / channel::dbm_to_mw(cfg.p_tx_dbm);
        Ok(channel::snjr(PositionPair { x, y }, cfg, 0.0, 0.0)? * power_ratio)
    }
}

/// Closed-form equilibrium for vanishing noise.
///
/// The jammer sits at `2LM/(L+M)`; the receiver plays `L` with probability
/// `L/(L+M)` and `M` otherwise; the value is `((M-L)/(M+L))^α`.
pub fn nash_noiseless(l: f64, m: f64, alpha: f64) -> Result<StaticEquilibrium> {
    if !(l > 0.0 && l < m) {
        return Err(Error::Domain(format!("need 0 < L < M, got L = {l}, M = {m}")));
    }
    if !(alpha >= 1.0) {
        return Err(Error::Domain(format!("alpha must be >= 1, got {alpha}")));
    }
    let p = l / (l + m);
    Ok(StaticEquilibrium {
        jammer_pos: 2.0 * l * m / (l + m),
        receiver_strategy: MixedStrategy {
            support: vec![l, m],
            probs: vec![p, 1.0 - p],
        },
        game_value: ((m - l) / (m + l)).powf(alpha),
    })
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |k| if k + 1 == n { hi } else { lo + k as f64 * step })
}

fn check_grid_n(grid_n: usize) -> Result<()> {
    if grid_n < 2 {
        return Err(Error::Domain(format!("grid needs at least 2 points, got {grid_n}")));
    }
    Ok(())
}

/// Receiver best responses to a jammer at `y`.
///
/// Without noise the answer is analytic: `{M}` left of the indifference point,
/// `{L}` right of it, both within `1e-6·(M-L)` of it. With noise the grid local
/// maxima within `1e-9` (relative) of the global maximum are returned.
pub fn best_response_receiver(y: f64, cfg: &ScenarioConfig, grid_n: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_grid_n(grid_n)?;
    if y < cfg.l || y > cfg.m {
        return Err(Error::Domain(format!("jammer position {y} outside [{}, {}]", cfg.l, cfg.m)));
    }
    if cfg.is_noiseless() {
        let j_star = 2.0 * cfg.l * cfg.m / (cfg.l + cfg.m);
        let tol = 1e-6 * (cfg.m - cfg.l);
        return Ok(if (y - j_star).abs() < tol {
            vec![cfg.l, cfg.m]
        } else if y < j_star {
            vec![cfg.m]
        } else {
            vec![cfg.l]
        });
    }

    let xs: Vec<f64> = grid(cfg.l, cfg.m, grid_n).collect();
    let us = xs
        .iter()
        .map(|&x| receiver_payoff(x, y, cfg))
        .collect::<Result<Vec<_>>>()?;
    let best = us.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = xs.len();
    Ok((0..n)
        .filter(|&k| {
            let left_ok = k == 0 || us[k] >= us[k - 1];
            let right_ok = k + 1 == n || us[k] >= us[k + 1];
            left_ok && right_ok && us[k] >= best * (1.0 - 1e-9)
        })
        .map(|k| xs[k])
        .collect())
}

/// Jammer best response to a receiver strategy.
///
/// A pure receiver is matched exactly; otherwise the lowest grid minimizer of
/// the expected payoff is returned.
pub fn best_response_jammer(receiver: &MixedStrategy, cfg: &ScenarioConfig, grid_n: usize) -> Result<f64> {
    cfg.validate()?;
    check_grid_n(grid_n)?;
    receiver.check_within(cfg)?;
    if let Some(x) = receiver.as_pure() {
        return Ok(x);
    }
    let mut best = (f64::INFINITY, cfg.l);
    for y in grid(cfg.l, cfg.m, grid_n) {
        let u = receiver.expected_payoff(y, cfg)?;
        if u < best.0 {
            best = (u, y);
        }
    }
    Ok(best.1)
}

/// Root of `f` on `[lo, hi]` by bisection, given `f(lo) < 0 < f(hi)`.
fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let (f_lo, f_hi) = (f(lo)?, f(hi)?);
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::Bracketing { lo, hi });
    }
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-10 * mid.abs() {
            return Ok(mid);
        }
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Numerical root of `u(L, y) = u(upper, y)` for any config, noiseless or not.
pub fn indifference_point_numeric(cfg: &ScenarioConfig, upper: f64) -> Result<f64> {
    check_upper(cfg, upper)?;
    let eps = 1e-9 * (cfg.m - cfg.l);
    bisect(cfg.l + eps, upper - eps, |y| {
        Ok(receiver_payoff(cfg.l, y, cfg)? - receiver_payoff(upper, y, cfg)?)
    })
}

fn check_upper(cfg: &ScenarioConfig, upper: f64) -> Result<()> {
    cfg.validate()?;
    if !(upper > cfg.l && upper <= cfg.m) {
        return Err(Error::Domain(format!("upper = {upper} must lie in (L, M] = ({}, {}]", cfg.l, cfg.m)));
    }
    Ok(())
}

/// Jammer position that leaves the receiver indifferent between `L` and `upper`.
///
/// Closed form `2·L·upper/(L+upper)` without noise, bisection otherwise.
pub fn indifference_point(cfg: &ScenarioConfig, upper: f64) -> Result<f64> {
    check_upper(cfg, upper)?;
    if cfg.is_noiseless() {
        return Ok(2.0 * cfg.l * upper / (cfg.l + upper));
    }
    indifference_point_numeric(cfg, upper)
}

/// Equilibrium with thermal noise.
///
/// Alternates `j ← indifference_point(W)` and `W ← argmax_{x > j} u(x, j)` on a
/// `grid_n` grid until `j` moves by less than one cell. The receiver mixes `L`
/// and `W` with the probability that makes `j` a stationary point of the
/// jammer's expected payoff.
pub fn nash_with_noise(cfg: &ScenarioConfig, grid_n: usize) -> Result<StaticEquilibrium> {
    cfg.validate()?;
    check_grid_n(grid_n)?;
    let cell = (cfg.m - cfg.l) / (grid_n - 1) as f64;
    let far_argmax = |j: f64| -> Result<f64> {
        let mut best = (f64::NEG_INFINITY, cfg.m);
        for x in grid(cfg.l, cfg.m, grid_n).filter(|&x| x > j) {
            let u = receiver_payoff(x, j, cfg)?;
            if u > best.0 {
                best = (u, x);
            }
        }
        Ok(best.1)
    };

    let mut far = cfg.m;
    let mut j = indifference_point(cfg, far)?;
    let mut converged = false;
    for _ in 0..MAX_FIXED_POINT_ITERS {
        far = far_argmax(j)?;
        let next = indifference_point(cfg, far)?;
        let moved = (next - j).abs();
        j = next;
        if moved < cell {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "noisy equilibrium fixed point",
            iterations: MAX_FIXED_POINT_ITERS,
        });
    }

    let h = 1e-6 * (cfg.m - cfg.l);
    let slope = |x: f64| -> Result<f64> {
        Ok((receiver_payoff(x, j + h, cfg)? - receiver_payoff(x, j - h, cfg)?) / (2.0 * h))
    };
    let (rise_near, fall_far) = (slope(cfg.l)?, slope(far)?);
    if !(rise_near > 0.0 && fall_far < 0.0) {
        return Err(Error::Domain(format!(
            "payoff slopes at the fixed point do not straddle zero ({rise_near}, {fall_far})"
        )));
    }
    let p = -fall_far / (rise_near - fall_far);
    Ok(StaticEquilibrium {
        jammer_pos: j,
        receiver_strategy: MixedStrategy {
            support: vec![cfg.l, far],
            probs: vec![p, 1.0 - p],
        },
        game_value: receiver_payoff(cfg.l, j, cfg)?,
    })
}

/// Stackelberg outcome of the noiseless static game with the given leader.
pub fn stackelberg(leader: Player, cfg: &ScenarioConfig, allow_mixed_leader: bool) -> Result<(StaticEquilibrium, f64)> {
    cfg.validate()?;
    if !cfg.is_noiseless() {
        return Err(Error::InvalidConfig("Stackelberg outcomes are defined for the noiseless game".into()));
    }
    let ne = nash_noiseless(cfg.l, cfg.m, cfg.alpha)?;
    match (leader, allow_mixed_leader) {
        (Player::Jammer, _) | (Player::Receiver, true) => {
            let v = ne.game_value;
            Ok((ne, v))
        }
        (Player::Receiver, false) => {
            // every committed position is matched by the follower
            let x = cfg.l;
            let eq = StaticEquilibrium {
                jammer_pos: x,
                receiver_strategy: MixedStrategy::pure(x),
                game_value: receiver_payoff(x, x, cfg)?,
            };
            let v = eq.game_value;
            Ok((eq, v))
        }
    }
}
