//! Python bindings: table lookups, the toy oracle, reservoir networks and
//! full experiment runs.

use std::path::PathBuf;

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use deqn::config::{AgentKind, ExperimentConfig};
use deqn::esn::{spectral_radius, DeqnNetwork, HiddenState, NetworkConfig};
use deqn::harness::{self, RunMetrics};
use deqn::toy::{value_iteration as vi, FiniteMdp};
use deqn::{env, phy, Error};

fn to_py(e: Error) -> PyErr {
    // Configuration problems surface as ValueError, everything else as RuntimeError.
    if e.exit_code() == 1 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Rows of the SINR to CQI table as `(cqi, threshold_db, modulation, rate_x1024, efficiency)`.
#[pyfunction]
fn cqi_table() -> Vec<(u8, f64, String, u16, f64)> {
    phy::CQI_TABLE
        .iter()
        .map(|r| (r.cqi, r.sinr_threshold_db, r.modulation.to_string(), r.code_rate_x1024, r.efficiency))
        .collect()
}

/// `(cqi, efficiency)` for an SINR in dB.
#[pyfunction]
fn sinr_to_efficiency(sinr_db: f64) -> (u8, f64) {
    phy::sinr_to_efficiency(sinr_db)
}

/// Bits per second for an efficiency in bits/symbol.
#[pyfunction]
fn throughput(efficiency: f64, bandwidth_hz: f64) -> f64 {
    phy::throughput(efficiency, bandwidth_hz)
}

/// Reward of one SU for one period; `pu_efficiency` is None when the PU is idle.
#[pyfunction]
#[pyo3(signature = (accessed, pu_efficiency, su_efficiency))]
fn reward(accessed: bool, pu_efficiency: Option<f64>, su_efficiency: f64) -> i32 {
    env::reward_of(accessed, pu_efficiency, su_efficiency)
}

/// Optimal action values of a finite MDP. `transitions[s][a]` lists
/// `(next_state, probability)` pairs; `rewards[s][a]` is the immediate reward.
#[pyfunction]
#[pyo3(signature = (transitions, rewards, gamma, tol=1e-10, max_iterations=100_000))]
fn value_iteration(
    transitions: Vec<Vec<Vec<(usize, f64)>>>,
    rewards: Vec<Vec<f64>>,
    gamma: f64,
    tol: f64,
    max_iterations: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let mdp = FiniteMdp {
        num_states: transitions.len(),
        num_actions: transitions.first().map_or(0, Vec::len),
        transitions,
        rewards,
        gamma,
    };
    vi(&mdp, tol, max_iterations).map_err(to_py)
}

fn build_config(
    config: Option<&str>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    agent: Option<&str>,
) -> PyResult<ExperimentConfig> {
    let mut cfg = match config {
        Some(text) => ExperimentConfig::from_str_kv(text).map_err(to_py)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if out_dir.is_some() {
        cfg.out_dir = out_dir;
    }
    if let Some(kind) = agent {
        cfg.set_all_agents(kind.parse::<AgentKind>().map_err(PyValueError::new_err)?);
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn metrics_dict<'py>(py: Python<'py>, m: &RunMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("pu_system_throughput", m.rounds.iter().map(|r| r.pu_system_throughput).collect::<Vec<_>>())?;
    d.set_item("su_system_throughput", m.rounds.iter().map(|r| r.su_system_throughput).collect::<Vec<_>>())?;
    d.set_item("mean_reward", m.rounds.iter().map(|r| r.mean_reward).collect::<Vec<_>>())?;
    d.set_item("epsilon", m.rounds.iter().map(|r| r.epsilon).collect::<Vec<_>>())?;
    d.set_item("warning_frequency", m.rounds.iter().map(|r| r.warning_frequency()).collect::<Vec<_>>())?;
    d.set_item("train_seconds", m.rounds.iter().map(|r| r.train_seconds).collect::<Vec<_>>())?;
    d.set_item("period_mean_reward", m.period_mean_reward.clone())?;
    Ok(d)
}

/// Runs a full experiment. `config` is flat `key = value` text; the other
/// arguments override it. Returns per-round series.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None, out_dir=None, agent=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    config: Option<&str>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    agent: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = build_config(config, seed, out_dir, agent)?;
    let metrics = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    metrics_dict(py, &metrics)
}

/// Per-round PU system throughput with every SU silent.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn pu_baseline(py: Python<'_>, config: Option<&str>, seed: Option<u64>) -> PyResult<Vec<f64>> {
    let cfg = build_config(config, seed, None, None)?;
    let base = py.detach(|| harness::run_pu_only_baseline(&cfg)).map_err(to_py)?;
    Ok(base.round_pu_throughput)
}

/// Trains on the 4-state ring MDP and compares with value iteration.
#[pyfunction]
#[pyo3(signature = (seed=1, layers=2, rounds=50))]
fn oracle_test<'py>(py: Python<'py>, seed: u64, layers: usize, rounds: usize) -> PyResult<Bound<'py, PyDict>> {
    let net = NetworkConfig::with_layers(layers);
    let r = py
        .detach(|| harness::oracle_test(&net, &harness::toy_agent_config(), seed, rounds))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("oracle_q", r.oracle_q.clone())?;
    d.set_item("oracle_policy", r.oracle_policy.clone())?;
    d.set_item("learned_policy", r.learned_policy.clone())?;
    d.set_item("matches", r.final_match())?;
    d.set_item("first_match", r.first_match)?;
    Ok(d)
}

/// Reservoir network with a linear readout. Hidden states are lists of
/// per-layer lists.
#[pyclass(name = "EchoStateNetwork")]
struct PyNetwork {
    net: DeqnNetwork,
}

fn to_state(layers: Vec<Vec<f64>>) -> HiddenState {
    HiddenState {
        layers: layers.into_iter().map(DVector::from_vec).collect(),
    }
}

fn from_state(h: &HiddenState) -> Vec<Vec<f64>> {
    h.layers.iter().map(|l| l.iter().copied().collect()).collect()
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (input_dim, output_dim, layers=2, neurons=32, leak=0.7, spectral_radius=0.9, seed=0))]
    fn new(
        input_dim: usize,
        output_dim: usize,
        layers: usize,
        neurons: usize,
        leak: f64,
        spectral_radius: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = NetworkConfig {
            layers,
            neurons,
            leak,
            spectral_radius,
            ..NetworkConfig::default()
        };
        Ok(Self {
            net: DeqnNetwork::new(input_dim, output_dim, &cfg, seed).map_err(to_py)?,
        })
    }

    fn zero_state(&self) -> Vec<Vec<f64>> {
        from_state(&self.net.zero_state())
    }

    fn advance(&self, state: Vec<Vec<f64>>, input: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let h = self.net.advance(&to_state(state), &input).map_err(to_py)?;
        Ok(from_state(&h))
    }

    fn readout(&self, input: Vec<f64>, state: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let q = self.net.readout(&input, &to_state(state)).map_err(to_py)?;
        Ok(q.iter().copied().collect())
    }

    /// Spectral radius of each layer's recurrent matrix.
    fn spectral_radii(&self) -> Vec<f64> {
        self.net.reservoir().layers().iter().map(|l| spectral_radius(l.w_rec())).collect()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.net.feature_dim()
    }

    fn to_json(&self) -> PyResult<String> {
        self.net.save_json().map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            net: DeqnNetwork::load_json(text).map_err(to_py)?,
        })
    }
}

#[pymodule]
fn deqn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cqi_table, m)?)?;
    m.add_function(wrap_pyfunction!(sinr_to_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(throughput, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(pu_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_test, m)?)?;
    m.add_class::<PyNetwork>()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_functions_forward_to_the_library() {
        let table = cqi_table();
        assert_eq!(table.len(), 16);
        assert_eq!(table[15], (15, 19.829, "64QAM".to_string(), 948, 5.5547));
        assert_eq!(sinr_to_efficiency(5.0), (7, 1.4766));
        assert_eq!(reward(true, Some(1.49), 5.0), -2);
        let q = value_iteration(vec![vec![vec![(0, 1.0)]]], vec![vec![1.0]], 0.9, 1e-10, 100_000).unwrap();
        assert!((q[0][0] - 10.0).abs() < 1e-8);
    }
}
