//! Dueling deep Q-network with experience replay and a target network.
//!
//! The network is a ReLU trunk feeding a scalar value head and a per-action
//! advantage head, combined as `Q(a) = V + A(a) − mean(A)`. Parameters live in
//! one flat vector: for every layer (trunk layers in order, then the value
//! head, then the advantage head) the row-major `out × in` weights followed by
//! the `out` biases.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::LearningConfig;
use crate::env::{legal_actions, Action, GridSpec, Observation};
use crate::error::{Error, Result};

const WEIGHTS_HEADER: &str = "# mobjam dueling-net v1";

/// One-hot position encoding: `2N` entries when the opponent is observed, `N` otherwise.
pub fn encode_state(obs: &Observation, grid: &GridSpec) -> Result<Vec<f64>> {
    let n = grid.n_positions;
    let own = obs.own();
    if own >= n {
        return Err(Error::Contract(format!("own position {own} outside grid of {n}")));
    }
    match obs.opponent() {
        Some(opp) if opp >= n => Err(Error::Contract(format!("opponent position {opp} outside grid of {n}"))),
        Some(opp) => {
            let mut v = vec![0.0; 2 * n];
            v[own] = 1.0;
            v[n + opp] = 1.0;
            Ok(v)
        }
        None => {
            let mut v = vec![0.0; n];
            v[own] = 1.0;
            Ok(v)
        }
    }
}

/// Per-slot legality of the `2S+1` moves at `pos`.
pub fn legal_mask(pos: usize, grid: &GridSpec) -> Vec<bool> {
    let mut mask = vec![false; 2 * grid.max_step + 1];
    for a in legal_actions(pos, grid) {
        mask[a.slot(grid.max_step)] = true;
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Layer {
    fn size(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.outputs * self.inputs
    }

    fn apply(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &params[self.offset..self.bias_offset()];
        let b = &params[self.bias_offset()..self.offset + self.size()];
        let nonzero = sparse_support(x);
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                b[o] + match &nonzero {
                    Some(idx) => idx.iter().map(|&i| row[i] * x[i]).sum(),
                    None => dot(row, x),
                }
            })
            .collect()
    }

    /// Accumulates parameter gradients for upstream gradient `g` at input `x`
    /// and, when asked, returns the gradient with respect to `x`.
    fn backward(&self, params: &[f64], grad: &mut [f64], x: &[f64], g: &[f64], input_grad: bool) -> Vec<f64> {
        let mut gx = vec![0.0; if input_grad { self.inputs } else { 0 }];
        let bias = self.bias_offset();
        let nonzero = sparse_support(x);
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let row = self.offset + o * self.inputs;
            match &nonzero {
                Some(idx) => {
                    for &i in idx {
                        grad[row + i] += go * x[i];
                    }
                }
                None => {
                    for (gw, xi) in grad[row..row + self.inputs].iter_mut().zip(x) {
                        *gw += go * xi;
                    }
                }
            }
            if input_grad {
                for (gi, w) in gx.iter_mut().zip(&params[row..row + self.inputs]) {
                    *gi += go * w;
                }
            }
            grad[bias + o] += go;
        }
        gx
    }
}

/// Indices of the nonzero entries when they are at most a quarter of `x`.
fn sparse_support(x: &[f64]) -> Option<Vec<usize>> {
    let idx: Vec<usize> = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
    (idx.len() * 4 <= x.len()).then_some(idx)
}

/// Dot product with four independent accumulators.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (u, v) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += u[l] * v[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dense dueling Q-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuelingNet {
    input_dim: usize,
    hidden: Vec<usize>,
    n_actions: usize,
    trunk: Vec<Layer>,
    value_head: Layer,
    advantage_head: Layer,
    params: Vec<f64>,
}

struct ForwardCache {
    /// Input to every trunk layer, then the trunk output.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of every trunk layer.
    pre: Vec<Vec<f64>>,
    q: Vec<f64>,
}

impl DuelingNet {
    /// All-zero network of the given shape.
    pub fn zeros(input_dim: usize, hidden: &[usize], n_actions: usize) -> Result<Self> {
        if input_dim == 0 || n_actions == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "network dimensions must be positive: input {input_dim}, hidden {hidden:?}, actions {n_actions}"
            )));
        }
        let mut offset = 0;
        let mut layer = |inputs, outputs| {
            let l = Layer { inputs, outputs, offset };
            offset += l.size();
            l
        };
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            trunk.push(layer(width, h));
            width = h;
        }
        let value_head = layer(width, 1);
        let advantage_head = layer(width, n_actions);
        Ok(Self {
            input_dim,
            hidden: hidden.to_vec(),
            n_actions,
            trunk,
            value_head,
            advantage_head,
            params: vec![0.0; offset],
        })
    }

    /// He-normal weights (standard deviation `sqrt(2/fan_in)`) and zero biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], n_actions: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden, n_actions)?;
        let layers: Vec<Layer> = net.layers().collect();
        for l in layers {
            let normal = Normal::new(0.0, (2.0 / l.inputs as f64).sqrt()).expect("positive standard deviation");
            for w in &mut net.params[l.offset..l.bias_offset()] {
                *w = normal.sample(rng);
            }
        }
        Ok(net)
    }

    /// Network of the given shape with an explicit flat parameter vector.
    pub fn from_params(input_dim: usize, hidden: &[usize], n_actions: usize, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden, n_actions)?;
        net.set_params(params)?;
        Ok(net)
    }

    fn layers(&self) -> impl Iterator<Item = Layer> + '_ {
        self.trunk.iter().copied().chain([self.value_head, self.advantage_head])
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::Contract(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let mut activations = vec![input.to_vec()];
        let mut pre = Vec::with_capacity(self.trunk.len());
        for l in &self.trunk {
            let z = l.apply(&self.params, activations.last().expect("input is present"));
            activations.push(z.iter().map(|v| v.max(0.0)).collect());
            pre.push(z);
        }
        let h = activations.last().expect("input is present");
        let (q, _, _) = self.heads(h);
        ForwardCache { activations, pre, q }
    }

    fn heads(&self, h: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let v = self.value_head.apply(&self.params, h)[0];
        let a = self.advantage_head.apply(&self.params, h);
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        (a.iter().map(|ai| v + ai - mean).collect(), v, a)
    }

    /// Q-values for every action slot.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.forward_cached(input).q)
    }

    /// State value and raw advantages before aggregation.
    pub fn value_and_advantages(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(input)?;
        let cache = self.forward_cached(input);
        let (_, v, a) = self.heads(cache.activations.last().expect("input is present"));
        Ok((v, a))
    }

    /// Adds `c` to every advantage bias, which leaves Q unchanged.
    pub fn shift_advantages(&mut self, c: f64) {
        let l = self.advantage_head;
        for b in &mut self.params[l.bias_offset()..l.offset + l.size()] {
            *b += c;
        }
    }

    /// Adds the gradient of `Σ_k g[k]·Q(input)[k]` to `grad`.
    fn backward(&self, cache: &ForwardCache, g_q: &[f64], grad: &mut [f64]) {
        let g_v: f64 = g_q.iter().sum();
        let mean_g = g_v / self.n_actions as f64;
        let g_a: Vec<f64> = g_q.iter().map(|g| g - mean_g).collect();
        let h = cache.activations.last().expect("input is present");
        let deep = !self.trunk.is_empty();
        let mut g_h = self.value_head.backward(&self.params, grad, h, &[g_v], deep);
        for (a, b) in g_h.iter_mut().zip(self.advantage_head.backward(&self.params, grad, h, &g_a, deep)) {
            *a += b;
        }
        for (k, l) in self.trunk.iter().enumerate().rev() {
            let g_z: Vec<f64> = g_h.iter().zip(&cache.pre[k]).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
            g_h = l.backward(&self.params, grad, &cache.activations[k], &g_z, k > 0);
        }
    }

    /// Hard copy of all weights into `target`.
    pub fn sync_target(&self, target: &mut DuelingNet) {
        target.clone_from(self);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{WEIGHTS_HEADER}");
        let _ = writeln!(out, "input_dim {}", self.input_dim);
        let hidden: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "hidden {}", hidden.join(" "));
        let _ = writeln!(out, "actions {}", self.n_actions);
        let names = (0..self.trunk.len())
            .map(|k| format!("trunk.{k}"))
            .chain(["value".to_string(), "advantage".to_string()]);
        for (name, l) in names.zip(self.layers()) {
            for (kind, range, shape) in [
                ("weight", l.offset..l.bias_offset(), format!("{} {}", l.outputs, l.inputs)),
                ("bias", l.bias_offset()..l.offset + l.size(), l.outputs.to_string()),
            ] {
                let values: Vec<String> = self.params[range].iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "tensor {name}.{kind} {shape}");
                let _ = writeln!(out, "{}", values.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("unexpected end of weights file, expected {what}"),
            })
        };
        let (_, header) = next("header")?;
        if header.trim() != WEIGHTS_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("missing `{WEIGHTS_HEADER}` header"),
            });
        }
        let mut field = |key: &str| -> Result<(usize, Vec<usize>)> {
            let (i, line) = next(key)?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected `{key}`"),
                });
            }
            let nums = parts
                .map(str::parse)
                .collect::<std::result::Result<Vec<usize>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            Ok((i, nums))
        };
        let (_, input) = field("input_dim")?;
        let (_, hidden) = field("hidden")?;
        let (i, actions) = field("actions")?;
        if input.len() != 1 || actions.len() != 1 {
            return Err(Error::Parse {
                line: i + 1,
                message: "input_dim and actions take one number each".into(),
            });
        }
        let mut net = Self::zeros(input[0], &hidden, actions[0])?;
        let mut params = Vec::with_capacity(net.params.len());
        while let Some((i, line)) = lines.next() {
            if !line.starts_with("tensor ") {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected a `tensor` line".into(),
                });
            }
            let (j, values) = lines.next().ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "tensor without values".into(),
            })?;
            for tok in values.split_whitespace() {
                params.push(tok.parse::<f64>().map_err(|e| Error::Parse {
                    line: j + 1,
                    message: e.to_string(),
                })?);
            }
        }
        net.set_params(params)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Largest Q-value among legal slots, with its slot; ties go to the lowest slot.
pub fn masked_max(q: &[f64], mask: &[bool]) -> Result<(usize, f64)> {
    q.iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &ok))| ok)
        .fold(None, |best: Option<(usize, f64)>, (k, (&v, _))| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((k, v)),
        })
        .ok_or_else(|| Error::Contract("no legal action in mask".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action_slot: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_legal: Vec<bool>,
}

/// Mean squared TD error of `batch` and its gradient with respect to the
/// parameters of `net`; the target network is only evaluated.
pub fn td_loss_and_gradient(net: &DuelingNet, target: &DuelingNet, batch: &[&Transition], discount: f64) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Contract("training batch is empty".into()));
    }
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    // replayed states repeat often; the gradient is linear in the upstream
    // signal, so identical inputs share one forward and one backward pass
    let mut targets: Vec<(&[f64], Vec<f64>)> = Vec::new();
    let mut groups: Vec<(&[f64], ForwardCache, Vec<f64>)> = Vec::new();
    for t in batch {
        net.check_input(&t.state)?;
        if t.action_slot >= net.n_actions || t.next_legal.len() != net.n_actions {
            return Err(Error::Contract(format!(
                "transition action slot {} / mask length {} do not fit {} actions",
                t.action_slot,
                t.next_legal.len(),
                net.n_actions
            )));
        }
        let next_q = match targets.iter().position(|(s, _)| *s == t.next_state.as_slice()) {
            Some(k) => &targets[k].1,
            None => {
                targets.push((&t.next_state, target.forward(&t.next_state)?));
                &targets.last().expect("just pushed").1
            }
        };
        let (_, next_best) = masked_max(next_q, &t.next_legal)?;
        let y = t.reward + discount * next_best;
        let k = match groups.iter().position(|(s, _, _)| *s == t.state.as_slice()) {
            Some(k) => k,
            None => {
                groups.push((&t.state, net.forward_cached(&t.state), vec![0.0; net.n_actions]));
                groups.len() - 1
            }
        };
        let (_, cache, g_q) = &mut groups[k];
        let delta = cache.q[t.action_slot] - y;
        loss += delta * delta * scale;
        g_q[t.action_slot] += 2.0 * delta * scale;
    }
    for (_, cache, g_q) in &groups {
        net.backward(cache, g_q, &mut grad);
    }
    Ok((loss, grad))
}

/// One plain SGD step on the mean squared TD error; returns the loss before the step.
pub fn td_train_step(net: &mut DuelingNet, target: &DuelingNet, batch: &[&Transition], cfg: &LearningConfig) -> Result<f64> {
    let (loss, grad) = td_loss_and_gradient(net, target, batch, cfg.discount)?;
    for (p, g) in net.params.iter_mut().zip(&grad) {
        *p -= cfg.learning_rate * g;
    }
    Ok(loss)
}

/// Largest relative discrepancy between the analytic TD gradient and central
/// finite differences with step `h`; relative errors use `max(|a|, |n|, 1e-6)`
/// as denominator.
pub fn gradient_check(net: &DuelingNet, target: &DuelingNet, batch: &[&Transition], discount: f64, h: f64) -> Result<f64> {
    let (_, analytic) = td_loss_and_gradient(net, target, batch, discount)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..net.params.len() {
        let orig = net.params[k];
        probe.params[k] = orig + h;
        let (up, _) = td_loss_and_gradient(&probe, target, batch, discount)?;
        probe.params[k] = orig - h;
        let (down, _) = td_loss_and_gradient(&probe, target, batch, discount)?;
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, overwriting the oldest item once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// `k` items drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&T>> {
        if self.items.is_empty() {
            return Err(Error::Contract("cannot sample from an empty replay buffer".into()));
        }
        if k > self.items.len() {
            return Err(Error::Contract(format!("asked for {k} samples from {} stored items", self.items.len())));
        }
        Ok((0..k).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }
}

/// Network and replay settings of a deep agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepConfig {
    pub hidden: Vec<usize>,
    pub batch: usize,
    pub replay: usize,
    /// Target synchronization period in training steps.
    pub sync: u64,
}

impl Default for DeepConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            batch: 32,
            replay: 10_000,
            sync: 1_000,
        }
    }
}

impl DeepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("hidden sizes must be positive: {:?}", self.hidden)));
        }
        if self.batch == 0 || self.replay == 0 || self.sync == 0 {
            return Err(Error::InvalidConfig("batch, replay and sync must be positive".into()));
        }
        Ok(())
    }
}

/// Online network, target network and replay buffer of one player.
#[derive(Debug, Clone)]
pub struct DeepAgent {
    grid: GridSpec,
    pub net: DuelingNet,
    pub target: DuelingNet,
    pub buffer: ReplayBuffer<Transition>,
    pub config: DeepConfig,
    pub learning: LearningConfig,
    updates: u64,
}

impl DeepAgent {
    pub fn new<R: Rng + ?Sized>(grid: GridSpec, observes_opponent: bool, config: DeepConfig, learning: LearningConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        learning.validate()?;
        let input = if observes_opponent { 2 * grid.n_positions } else { grid.n_positions };
        let net = DuelingNet::new(input, &config.hidden, 2 * grid.max_step + 1, rng)?;
        Ok(Self {
            grid,
            target: net.clone(),
            net,
            buffer: ReplayBuffer::new(config.replay)?,
            config,
            learning,
            updates: 0,
        })
    }

    pub fn with_network(mut self, net: DuelingNet) -> Result<Self> {
        if net.input_dim() != self.net.input_dim() || net.n_actions() != self.net.n_actions() {
            return Err(Error::InvalidConfig(format!(
                "loaded network has input {} / actions {}, expected {} / {}",
                net.input_dim(),
                net.n_actions(),
                self.net.input_dim(),
                self.net.n_actions()
            )));
        }
        self.target = net.clone();
        self.net = net;
        Ok(self)
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<Action> {
        let q = self.net.forward(&encode_state(obs, &self.grid)?)?;
        let (slot, _) = masked_max(&q, &legal_mask(obs.own(), &self.grid))?;
        Ok(Action::from_slot(slot, self.grid.max_step))
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, epsilon: f64, rng: &mut R) -> Result<Action> {
        if rng.random::<f64>() < epsilon {
            return Ok(crate::agents::random_action(obs.own(), &self.grid, rng));
        }
        self.greedy_action(obs)
    }

    /// Stores the transition and, once a full batch is available, takes one
    /// training step; returns its loss.
    pub fn learn<R: Rng + ?Sized>(&mut self, s: &Observation, a: Action, reward: f64, s_next: &Observation, rng: &mut R) -> Result<Option<f64>> {
        self.buffer.push(Transition {
            state: encode_state(s, &self.grid)?,
            action_slot: a.slot(self.grid.max_step),
            reward,
            next_state: encode_state(s_next, &self.grid)?,
            next_legal: legal_mask(s_next.own(), &self.grid),
        });
        if self.buffer.len() < self.config.batch {
            return Ok(None);
        }
        let batch = self.buffer.sample(self.config.batch, rng)?;
        let loss = td_train_step(&mut self.net, &self.target, &batch, &self.learning)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.sync) {
            self.net.sync_target(&mut self.target);
        }
        Ok(Some(loss))
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(net: &DuelingNet, k: usize, rng: &mut ChaCha8Rng) -> Vec<Transition> {
        (0..k)
            .map(|_| {
                let mut mask: Vec<bool> = (0..net.n_actions()).map(|_| rng.random_bool(0.6)).collect();
                mask[0] = true;
                Transition {
                    state: (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    action_slot: rng.random_range(0..net.n_actions()),
                    reward: rng.random_range(-1.0..1.0),
                    next_state: (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    next_legal: mask,
                }
            })
            .collect()
    }

    #[test]
    fn encodings() {
        let g = GridSpec::new(9, 10.0, 50.0, 2).unwrap();
        let e = encode_state(&Observation::OwnOnly { own: 0 }, &g).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let e = encode_state(&Observation::Full { own: 2, opponent: 7 }, &g).unwrap();
        assert_eq!(e.len(), 18);
        assert_eq!(e[2], 1.0);
        assert_eq!(e[16], 1.0);
        for own in 0..9 {
            for opponent in 0..9 {
                let e = encode_state(&Observation::Full { own, opponent }, &g).unwrap();
                assert_eq!(e.iter().sum::<f64>(), 2.0);
            }
            assert_eq!(encode_state(&Observation::OwnOnly { own }, &g).unwrap().iter().sum::<f64>(), 1.0);
        }
        assert!(encode_state(&Observation::OwnOnly { own: 9 }, &g).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DuelingNet::zeros(18, &[64, 64], 5).unwrap();
        assert_eq!(net.forward(&[1.0; 18]).unwrap(), vec![0.0; 5]);
        assert!(net.forward(&[1.0; 17]).is_err());
    }

    #[test]
    fn advantage_shift_and_mean_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = DuelingNet::new(18, &[64, 64], 5, &mut rng).unwrap();
        let x: Vec<f64> = (0..18).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let q = net.forward(&x).unwrap();
        assert!(q.iter().all(|v| v.is_finite()));
        let (v, _) = net.value_and_advantages(&x).unwrap();
        let mean_dev = q.iter().map(|qa| qa - v).sum::<f64>() / 5.0;
        assert!(mean_dev.abs() < 1e-10);
        net.shift_advantages(3.7);
        for (a, b) in q.iter().zip(net.forward(&x).unwrap()) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    fn fixture() -> (DuelingNet, DuelingNet, Transition) {
        let net = DuelingNet::from_params(
            2,
            &[2],
            2,
            vec![0.5, -0.3, 0.2, 0.8, 0.1, -0.2, 0.7, -0.4, 0.05, 0.3, 0.6, -0.5, 0.9, 0.0, 0.1],
        )
        .unwrap();
        let target = DuelingNet::from_params(
            2,
            &[2],
            2,
            vec![0.45, -0.27, 0.18, 0.72, 0.1, -0.2, 0.7, -0.4, 0.15, 0.3, -0.5, 0.6, 0.9, 0.0, 0.1],
        )
        .unwrap();
        let t = Transition {
            state: vec![1.0, 0.0],
            action_slot: 1,
            reward: 0.5,
            next_state: vec![0.0, 1.0],
            next_legal: vec![true, false],
        };
        (net, target, t)
    }

    #[test]
    fn two_two_two_fixture() {
        let (net, target, t) = fixture();
        let q = net.forward(&t.state).unwrap();
        assert_relative_eq!(q[0], 0.66, max_relative = 1e-12);
        assert_relative_eq!(q[1], 0.28, max_relative = 1e-12);
        let (loss, grad) = td_loss_and_gradient(&net, &target, &[&t], 0.9).unwrap();
        assert_relative_eq!(loss, 0.04194304, max_relative = 1e-12);
        let expected = [
            0.12288, 0.0, 0.0, 0.0, 0.12288, 0.0, 0.24576, 0.0, 0.4096, -0.12288, 0.0, 0.12288, 0.0, -0.2048, 0.2048,
        ];
        for (g, e) in grad.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{grad:?}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for hidden in [vec![], vec![3], vec![4, 3]] {
            // random biases too, so no unit sits exactly on the ReLU kink
            let mut random_net = || {
                let shape = DuelingNet::zeros(4, &hidden, 3).unwrap();
                let params = (0..shape.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                DuelingNet::from_params(4, &hidden, 3, params).unwrap()
            };
            let net = random_net();
            let target = random_net();
            let batch = random_batch(&net, 5, &mut rng);
            let refs: Vec<&Transition> = batch.iter().collect();
            let err = gradient_check(&net, &target, &refs, 0.9, 1e-5).unwrap();
            assert!(err < 1e-4, "hidden {hidden:?}: {err}");
        }
    }

    #[test]
    fn fixed_point_gives_zero_loss() {
        let (_, target, mut t) = fixture();
        let net = target.clone();
        let q = net.forward(&t.state).unwrap();
        let (_, best) = masked_max(&target.forward(&t.next_state).unwrap(), &t.next_legal).unwrap();
        t.reward = q[t.action_slot] - 0.9 * best;
        let mut trained = net.clone();
        let cfg = LearningConfig {
            learning_rate: 0.1,
            discount: 0.9,
            ..LearningConfig::deep(10)
        };
        let loss = td_train_step(&mut trained, &target, &[&t], &cfg).unwrap();
        assert!(loss < 1e-24);
        for (a, b) in trained.params().iter().zip(net.params()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(td_train_step(&mut trained, &target, &[], &cfg).is_err());
    }

    #[test]
    fn target_sync() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = DuelingNet::new(6, &[8], 3, &mut rng).unwrap();
        let mut target = net.clone();
        let batch = random_batch(&net, 8, &mut rng);
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = LearningConfig {
            learning_rate: 0.05,
            ..LearningConfig::deep(10)
        };
        td_train_step(&mut net, &target, &refs, &cfg).unwrap();
        let x = vec![0.3; 6];
        assert_ne!(net.forward(&x).unwrap(), target.forward(&x).unwrap());
        net.sync_target(&mut target);
        for _ in 0..100 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert_eq!(net.forward(&x).unwrap(), target.forward(&x).unwrap());
        }
        let before = target.clone();
        net.sync_target(&mut target);
        assert_eq!(before, target);
    }

    #[test]
    fn replay_buffer_behaviour() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        assert!(buf.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        for i in 0..3 {
            buf.push(i);
        }
        let mut items: Vec<i32> = buf.iter().copied().collect();
        items.sort();
        assert_eq!(items, vec![1, 2]);
        assert!(buf.sample(3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());

        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..10usize {
            buf.push(i);
        }
        let draw = |seed| buf.sample(10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().into_iter().copied().collect::<Vec<_>>();
        assert_eq!(draw(8), draw(8));
        let mut counts = [0usize; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10_000 {
            for &i in buf.sample(10, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let n = 100_000.0;
        let sigma = (n * 0.1 * 0.9f64).sqrt();
        for c in counts {
            assert!((c as f64 - n * 0.1).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn weights_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = DuelingNet::new(18, &[7, 5], 5, &mut rng).unwrap();
        let back = DuelingNet::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
        assert!(DuelingNet::from_text("nonsense").is_err());
        let truncated: String = net.to_text().lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(DuelingNet::from_text(&truncated).is_err());
    }

    #[test]
    fn masked_selection() {
        assert_eq!(masked_max(&[5.0, 1.0, 2.0], &[false, true, true]).unwrap(), (2, 2.0));
        assert_eq!(masked_max(&[1.0, 1.0], &[true, true]).unwrap().0, 0);
        assert!(masked_max(&[1.0], &[false]).is_err());
    }
}
