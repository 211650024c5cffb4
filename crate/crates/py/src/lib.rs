//! Python bindings: static equilibria, oracles, the experiment harness and
//! the dueling network.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::mobjam as core;
use core::channel::{self, PositionPair, ScenarioConfig as CoreScenario};
use core::env::GridSpec;
use core::harness::{self, ExportFormat};
use core::kv::KeyValues;
use core::oracle::{self, PayoffMatrix, StageSolver};
use core::rng::{stream_rng, Stream};
use core::static_game::{self, StaticEquilibrium};

fn py_err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn key_values(settings: Option<&Bound<'_, PyDict>>) -> PyResult<KeyValues> {
    let mut kv = KeyValues::new();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            kv.insert(k.extract::<String>()?, v.str()?.to_string());
        }
    }
    Ok(kv)
}

/// Physical scenario: geometry, powers, noise and shadowing.
#[pyclass(name = "ScenarioConfig", from_py_object)]
#[derive(Clone)]
struct PyScenario {
    inner: CoreScenario,
}

#[pymethods]
impl PyScenario {
    /// Noise-free scenario (the SNJR equals the normalized value).
    #[staticmethod]
    fn noiseless(l: f64, m: f64, alpha: f64) -> PyResult<Self> {
        Ok(Self { inner: CoreScenario::noiseless(l, m, alpha).py()? })
    }

    /// Vehicular link budget: 23 dBm, -174 dBm/Hz over 20 MHz, log-normal shadowing.
    #[staticmethod]
    #[pyo3(signature = (l, m, alpha, shadow_var_db=0.0))]
    fn vehicular(l: f64, m: f64, alpha: f64, shadow_var_db: f64) -> PyResult<Self> {
        Ok(Self { inner: CoreScenario::vehicular(l, m, alpha, shadow_var_db).py()? })
    }

    #[getter]
    fn l(&self) -> f64 {
        self.inner.l
    }

    #[getter]
    fn m(&self) -> f64 {
        self.inner.m
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn is_noiseless(&self) -> bool {
        self.inner.is_noiseless()
    }

    fn snjr(&self, x: f64, y: f64, shadow_r_db: f64, shadow_j_db: f64) -> PyResult<f64> {
        let pair = PositionPair::new(x, y, &self.inner).py()?;
        channel::snjr(pair, &self.inner, shadow_r_db, shadow_j_db).py()
    }

    /// Spectral efficiency with shadowing drawn from a generator seeded by `seed`.
    fn spectral_efficiency(&self, x: f64, y: f64, seed: u64) -> PyResult<f64> {
        let pair = PositionPair::new(x, y, &self.inner).py()?;
        let mut rng = stream_rng(seed, Stream::Shadowing);
        channel::spectral_efficiency(pair, &self.inner, &mut rng).py()
    }

    fn __repr__(&self) -> String {
        format!("ScenarioConfig({})", self.inner.to_key_values().to_string().trim().replace('\n', ", "))
    }
}

/// Normalized receiver payoff `|x - y|^α / x^α`.
#[pyfunction]
fn value(x: f64, y: f64, alpha: f64) -> PyResult<f64> {
    channel::value(x, y, alpha).py()
}

#[pyfunction]
#[pyo3(signature = (distance, alpha, shadow_db=0.0))]
fn channel_gain_db(distance: f64, alpha: f64, shadow_db: f64) -> PyResult<f64> {
    channel::channel_gain_db(distance, alpha, shadow_db).py()
}

fn equilibrium_dict<'py>(py: Python<'py>, eq: &StaticEquilibrium) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("jammer_pos", eq.jammer_pos)?;
    d.set_item("support", eq.receiver_strategy.support.clone())?;
    d.set_item("probs", eq.receiver_strategy.probs.clone())?;
    d.set_item("value", eq.game_value)?;
    Ok(d)
}

/// Closed-form equilibrium of the noise-free one-shot game.
#[pyfunction]
fn nash_noiseless(py: Python<'_>, l: f64, m: f64, alpha: f64) -> PyResult<Bound<'_, PyDict>> {
    equilibrium_dict(py, &static_game::nash_noiseless(l, m, alpha).py()?)
}

/// Numerical equilibrium of the one-shot game with thermal noise.
#[pyfunction]
#[pyo3(signature = (scenario, grid_n=static_game::DEFAULT_GRID_N))]
fn nash_with_noise<'py>(py: Python<'py>, scenario: &PyScenario, grid_n: usize) -> PyResult<Bound<'py, PyDict>> {
    equilibrium_dict(py, &static_game::nash_with_noise(&scenario.inner, grid_n).py()?)
}

/// Stackelberg outcome; `leader` is "r" or "j".
#[pyfunction]
#[pyo3(signature = (leader, scenario, allow_mixed_leader=false))]
fn stackelberg<'py>(
    py: Python<'py>,
    leader: &str,
    scenario: &PyScenario,
    allow_mixed_leader: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let leader = leader.parse().py()?;
    let (eq, v) = static_game::stackelberg(leader, &scenario.inner, allow_mixed_leader).py()?;
    let d = equilibrium_dict(py, &eq)?;
    d.set_item("value", v)?;
    Ok(d)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<PayoffMatrix> {
    PayoffMatrix::from_rows(&rows).py()
}

fn solution_dict<'py>(py: Python<'py>, s: &oracle::MatrixSolution) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("value", s.value)?;
    d.set_item("lower", s.lower)?;
    d.set_item("upper", s.upper)?;
    d.set_item("row_strategy", s.row_strategy.clone())?;
    d.set_item("col_strategy", s.col_strategy.clone())?;
    d.set_item("iterations", s.iterations)?;
    Ok(d)
}

/// Fictitious play on a zero-sum matrix game (rows maximize).
#[pyfunction]
fn fictitious_play(py: Python<'_>, rows: Vec<Vec<f64>>, iters: usize) -> PyResult<Bound<'_, PyDict>> {
    solution_dict(py, &oracle::fictitious_play(&matrix(rows)?, iters).py()?)
}

/// Exact value and optimal strategies by linear programming.
#[pyfunction]
fn solve_matrix_game(py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Bound<'_, PyDict>> {
    solution_dict(py, &oracle::solve_matrix_game(&matrix(rows)?).py()?)
}

fn square(n: usize, v: &[f64]) -> Vec<Vec<f64>> {
    v.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Minimax value iteration of the sequential game; tables are indexed `[x][y]`.
#[pyfunction]
#[pyo3(signature = (n_positions=9, l=10.0, m=50.0, max_step=1, alpha=2.0, gamma=0.99, tol=oracle::DEFAULT_VI_TOL, average_steps=0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn alternating_minimax_vi(
    py: Python<'_>,
    n_positions: usize,
    l: f64,
    m: f64,
    max_step: usize,
    alpha: f64,
    gamma: f64,
    tol: f64,
    average_steps: usize,
    seed: u64,
) -> PyResult<Bound<'_, PyDict>> {
    let grid = GridSpec::new(n_positions, l, m, max_step).py()?;
    let v = oracle::alternating_minimax_vi(&grid, alpha, gamma, tol).py()?;
    let d = PyDict::new(py);
    d.set_item("receiver_to_move", square(n_positions, &v.receiver_to_move))?;
    d.set_item("jammer_to_move", square(n_positions, &v.jammer_to_move))?;
    d.set_item("residuals", v.residuals.clone())?;
    if average_steps > 0 {
        let mut rng = stream_rng(seed, Stream::Env);
        let avg = oracle::alternating_average_reward(&v, &grid, alpha, gamma, 10, average_steps.div_ceil(10), &mut rng).py()?;
        d.set_item("long_run_average", avg)?;
    }
    Ok(d)
}

/// Shapley value iteration of the simultaneous game. `fp_iters > 0` solves
/// stages by fictitious play instead of exactly.
#[pyfunction]
#[pyo3(signature = (n_positions=9, l=10.0, m=50.0, max_step=1, alpha=2.0, gamma=0.99, tol=oracle::DEFAULT_VI_TOL, fp_iters=0, average_steps=0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn shapley_vi(
    py: Python<'_>,
    n_positions: usize,
    l: f64,
    m: f64,
    max_step: usize,
    alpha: f64,
    gamma: f64,
    tol: f64,
    fp_iters: usize,
    average_steps: usize,
    seed: u64,
) -> PyResult<Bound<'_, PyDict>> {
    let grid = GridSpec::new(n_positions, l, m, max_step).py()?;
    let solver = if fp_iters > 0 { StageSolver::FictitiousPlay { iters: fp_iters } } else { StageSolver::Exact };
    let v = oracle::shapley_vi(&grid, alpha, gamma, tol, solver).py()?;
    let d = PyDict::new(py);
    d.set_item("values", square(n_positions, &v.values))?;
    d.set_item("residuals", v.residuals.clone())?;
    d.set_item("stage_gap", v.stage_gap)?;
    if average_steps > 0 {
        let mut rng = stream_rng(seed, Stream::Env);
        let avg = oracle::simultaneous_average_reward(&v, &grid, alpha, 10, average_steps.div_ceil(10), &mut rng).py()?;
        d.set_item("long_run_average", avg)?;
    }
    Ok(d)
}

#[pyfunction]
fn moving_average(series: Vec<f64>, w: usize) -> PyResult<Vec<f64>> {
    harness::moving_average(&series, w).py()
}

/// `n × n` visit frequencies of `(x_idx, y_idx)` pairs.
#[pyfunction]
fn joint_occupancy(trace: Vec<(usize, usize)>, n: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(square(n, &harness::joint_occupancy(&trace, n).py()?))
}

/// One dynamic-game run. Settings use the same keys as the CLI config files
/// (`game`, `agent_r`, `agent_j`, `steps`, `seed`, `alpha`, `max_step`, ...).
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyExperiment {
    inner: harness::ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    #[new]
    #[pyo3(signature = (**settings))]
    fn new(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = harness::ExperimentConfig::new(core::env::GameVariant::Sequential, 1, 1_500_000, 0).py()?;
        cfg.apply(&key_values(settings)?).py()?;
        cfg.validate().py()?;
        Ok(Self { inner: cfg })
    }

    /// Flat `key -> value` view of every setting.
    fn to_dict(&self) -> BTreeMap<String, String> {
        self.inner.to_key_values().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn run(&self, py: Python<'_>) -> PyResult<RunResult> {
        let cfg = self.inner.clone();
        let metrics = py.detach(move || harness::run_experiment(&cfg)).py()?;
        Ok(RunResult { cfg: self.inner.clone(), metrics })
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentConfig(game={}, agent_r={}, agent_j={}, steps={}, seed={})",
            self.inner.variant.label(),
            self.inner.agent_r,
            self.inner.agent_j,
            self.inner.total_steps,
            self.inner.seed
        )
    }
}

/// Metrics of a finished run.
#[pyclass]
struct RunResult {
    cfg: harness::ExperimentConfig,
    metrics: harness::RunMetrics,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn rewards(&self) -> Vec<f64> {
        self.metrics.rewards.clone()
    }

    #[getter]
    fn trace(&self) -> Vec<(usize, usize)> {
        self.metrics.trace.clone()
    }

    #[getter]
    fn occupancy(&self) -> Vec<Vec<f64>> {
        square(self.metrics.n_positions, &self.metrics.occupancy)
    }

    #[getter]
    fn value_r(&self) -> Option<Vec<Vec<f64>>> {
        self.metrics.value_r.as_ref().map(|v| square(self.metrics.n_positions, v))
    }

    #[getter]
    fn value_j(&self) -> Option<Vec<Vec<f64>>> {
        self.metrics.value_j.as_ref().map(|v| square(self.metrics.n_positions, v))
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.metrics.summary(self.cfg.ma_window).py()?;
        let d = PyDict::new(py);
        d.set_item("steps", s.steps)?;
        d.set_item("overall_mean", s.overall_mean)?;
        d.set_item("late_mean", s.late_mean)?;
        d.set_item("late_std", s.late_std)?;
        d.set_item("plateau_step", s.plateau_step)?;
        d.set_item("wall_clock_s", s.wall_clock_s)?;
        Ok(d)
    }

    /// Writes CSV files (`"csv"`) or `run.json` (`"json"`) into `directory`.
    #[pyo3(signature = (directory, format="csv"))]
    fn export(&self, directory: std::path::PathBuf, format: &str) -> PyResult<Vec<String>> {
        let format = match format {
            "csv" => ExportFormat::Csv,
            "json" => ExportFormat::Json,
            other => return Err(PyValueError::new_err(format!("format must be csv or json, got {other}"))),
        };
        let written = harness::export(&self.metrics, &self.cfg, format, directory).py()?;
        Ok(written.iter().map(|p| p.display().to_string()).collect())
    }
}

/// Learning versus random receiver under spectral-efficiency payoffs; one
/// dict per α with the run means and their ratio.
#[pyfunction]
#[pyo3(signature = (alphas=vec![2.0, 2.5, 3.0], runs=10, steps=1_500_000, seed=0, max_step=1))]
fn strategic_gain_experiment(
    py: Python<'_>,
    alphas: Vec<f64>,
    runs: usize,
    steps: u64,
    seed: u64,
    max_step: usize,
) -> PyResult<Vec<Bound<'_, PyDict>>> {
    let cfg = harness::GainConfig {
        alphas,
        runs,
        total_steps: steps,
        seed,
        max_step,
        ..harness::GainConfig::default()
    };
    let points = py.detach(move || harness::strategic_gain_experiment(&cfg)).py()?;
    points
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("alpha", p.alpha)?;
            d.set_item("strategic_se", p.strategic_se)?;
            d.set_item("random_se", p.random_se)?;
            d.set_item("ratio", p.ratio)?;
            d.set_item("strategic_runs", p.strategic_runs.clone())?;
            d.set_item("random_runs", p.random_runs.clone())?;
            Ok(d)
        })
        .collect()
}

/// Dueling Q-network: `Q = V + A - mean(A)`.
#[pyclass(name = "DuelingNet")]
struct PyDuelingNet {
    inner: core::deep::DuelingNet,
}

#[pymethods]
impl PyDuelingNet {
    #[new]
    #[pyo3(signature = (input_dim, hidden, n_actions, seed=0))]
    fn new(input_dim: usize, hidden: Vec<usize>, n_actions: usize, seed: u64) -> PyResult<Self> {
        let mut rng = stream_rng(seed, Stream::AgentReceiver);
        Ok(Self { inner: core::deep::DuelingNet::new(input_dim, &hidden, n_actions, &mut rng).py()? })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self { inner: core::deep::DuelingNet::load(path).py()? })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&input).py()
    }

    fn value_and_advantages(&self, input: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        self.inner.value_and_advantages(&input).py()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    #[setter]
    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner.set_params(params).py()
    }
}

#[pymodule]
fn mobjam(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyExperiment>()?;
    m.add_class::<RunResult>()?;
    m.add_class::<PyDuelingNet>()?;
    m.add_function(wrap_pyfunction!(value, m)?)?;
    m.add_function(wrap_pyfunction!(channel_gain_db, m)?)?;
    m.add_function(wrap_pyfunction!(nash_noiseless, m)?)?;
    m.add_function(wrap_pyfunction!(nash_with_noise, m)?)?;
    m.add_function(wrap_pyfunction!(stackelberg, m)?)?;
    m.add_function(wrap_pyfunction!(fictitious_play, m)?)?;
    m.add_function(wrap_pyfunction!(solve_matrix_game, m)?)?;
    m.add_function(wrap_pyfunction!(alternating_minimax_vi, m)?)?;
    m.add_function(wrap_pyfunction!(shapley_vi, m)?)?;
    m.add_function(wrap_pyfunction!(moving_average, m)?)?;
    m.add_function(wrap_pyfunction!(joint_occupancy, m)?)?;
    m.add_function(wrap_pyfunction!(strategic_gain_experiment, m)?)?;
    Ok(())
}
