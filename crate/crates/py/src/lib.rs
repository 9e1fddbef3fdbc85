//! Python bindings: networks, the fastest-path planner, latency sampling,
//! scenario runs and the route service's line protocol.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use twinroute::comms::{self, LatencyStreams, SvcMode};
use twinroute::harness::{self, KpiOptions};
use twinroute::nav::{self, EventSets};
use twinroute::network::{self, GridSpec, JourneyTimeMatrix, NodeId, TrafficNetwork};
use twinroute::sim::{self, SimulationScenario};

fn err(e: twinroute::Error) -> PyErr {
    if e.exit_code() == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn node(m: usize, i: usize) -> PyResult<NodeId> {
    if i == 0 || i > m {
        return Err(PyValueError::new_err(format!("node {i} outside 1..={m}")));
    }
    Ok(NodeId(i))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<JourneyTimeMatrix> {
    let m = rows.len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(JourneyTimeMatrix::from_rows(&rows))
}

/// Directed road network with 1-based node ids.
#[pyclass(name = "Network", frozen)]
struct PyNetwork(Arc<TrafficNetwork>);

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        TrafficNetwork::load(path).map(|n| PyNetwork(Arc::new(n))).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        TrafficNetwork::from_json_str(text).map(|n| PyNetwork(Arc::new(n))).map_err(err)
    }

    /// The default 9 x 10 grid.
    #[staticmethod]
    fn grid() -> PyResult<Self> {
        network::generate_grid_network(&GridSpec::default())
            .map(|n| PyNetwork(Arc::new(n)))
            .map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn link_count(&self) -> usize {
        self.0.link_count()
    }

    /// `(from, to, length_m, v_free_mps, k_max)` per link, in link order.
    fn links(&self) -> Vec<(usize, usize, f64, f64, f64)> {
        self.0
            .links()
            .iter()
            .map(|l| (l.from.0, l.to.0, l.length_m, l.v_free_mps, l.k_max_veh_per_m))
            .collect()
    }

    /// Journey-time matrix for per-link vehicle counts; `inf` where no link.
    fn journey_matrix(&self, volumes: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        network::build_journey_matrix(&self.0, &volumes)
            .map(|m| m.to_rows())
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Network(nodes={}, links={})", self.0.node_count(), self.0.link_count())
    }
}

#[pyfunction]
fn journey_speed(density: f64, v_free: f64, k_max: f64) -> f64 {
    network::journey_speed(density, v_free, k_max)
}

/// Seconds to traverse a link holding `vehicles`; `inf` when stalled.
#[pyfunction]
fn journey_time(length_m: f64, v_free_mps: f64, k_max: f64, vehicles: f64) -> f64 {
    let link = network::Link {
        from: NodeId(1),
        to: NodeId(2),
        length_m,
        v_free_mps,
        k_max_veh_per_m: k_max,
    };
    network::journey_time(&link, vehicles).seconds()
}

/// Fastest path over a square matrix of seconds. Returns `(nodes, cost)` or
/// `None` when unreachable.
#[pyfunction]
fn dijkstra(rows: Vec<Vec<f64>>, start: usize, end: usize) -> PyResult<Option<(Vec<usize>, f64)>> {
    let m = rows.len();
    let mx = matrix(rows)?;
    let p = nav::dijkstra_fastest(&mx, node(m, start)?, node(m, end)?).map_err(err)?;
    Ok(p.map(|p| (p.nodes.iter().map(|n| n.0).collect(), p.cost.seconds())))
}

/// Blocks every entry into `nodes` and every `(from, to)` in `links`.
#[pyfunction]
#[pyo3(signature = (rows, nodes = Vec::new(), links = Vec::new()))]
fn mask_events(rows: Vec<Vec<f64>>, nodes: Vec<usize>, links: Vec<(usize, usize)>) -> PyResult<Vec<Vec<f64>>> {
    let mx = matrix(rows)?;
    let ev = EventSets {
        nodes: nodes.into_iter().map(NodeId).collect(),
        links: links.into_iter().map(|(a, b)| (NodeId(a), NodeId(b))).collect(),
    };
    Ok(nav::mask_events(&mx, &ev).to_rows())
}

#[pyfunction]
fn request_distance(v_free_mps: f64) -> f64 {
    nav::request_distance(v_free_mps)
}

#[pyfunction]
fn check_deadline(t_svc_s: f64, v_free_mps: f64) -> bool {
    comms::check_deadline(t_svc_s, v_free_mps)
}

/// Per-flow latency distributions plus delivery ratios.
#[pyclass(name = "LatencyModel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLatencyModel(comms::LatencyModel);

#[pymethods]
impl PyLatencyModel {
    #[staticmethod]
    fn measured() -> Self {
        PyLatencyModel(comms::LatencyModel::measured())
    }

    #[staticmethod]
    fn pinned_max() -> Self {
        PyLatencyModel(comms::LatencyModel::pinned_max())
    }

    #[staticmethod]
    fn pinned_min() -> Self {
        PyLatencyModel(comms::LatencyModel::pinned_min())
    }

    #[staticmethod]
    fn zero() -> Self {
        PyLatencyModel(comms::LatencyModel::zero())
    }

    /// Service latency draws in seconds.
    #[pyo3(signature = (n, seed = 1, single_v2c = false))]
    fn sample_service(&self, n: usize, seed: u64, single_v2c: bool) -> Vec<f64> {
        let mode = if single_v2c { SvcMode::SingleV2c } else { SvcMode::RoundTrip };
        let mut st = LatencyStreams::new(seed);
        (0..n).map(|_| comms::sample_service_latency(&self.0, &mut st, mode)).collect()
    }

    /// Twin-modelling latency draws in seconds.
    #[pyo3(signature = (n, seed = 1))]
    fn sample_dt(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut st = LatencyStreams::new(seed);
        (0..n).map(|_| comms::sample_dt_latency(&self.0, &mut st)).collect()
    }

    /// `(min, max)` of the service latency in seconds.
    #[pyo3(signature = (single_v2c = false))]
    fn svc_bounds(&self, single_v2c: bool) -> (f64, f64) {
        self.0.svc_bounds(if single_v2c { SvcMode::SingleV2c } else { SvcMode::RoundTrip })
    }

    /// Monte-Carlo report as a dict; `text` holds the printable table.
    #[pyo3(signature = (samples = 100_000, seed = 1, v_free_mps = 20.0 / 3.6))]
    fn kpi(&self, py: Python<'_>, samples: usize, seed: u64, v_free_mps: f64) -> PyResult<Py<PyAny>> {
        let opts = KpiOptions {
            samples,
            seed,
            v_free_mps,
            ..Default::default()
        };
        let out = py.detach(|| harness::cmd_kpi(&self.0, &opts)).map_err(err)?;
        let d = to_py(py, &out.report)?;
        d.bind(py).set_item("text", out.text)?;
        d.bind(py).set_item("all_pass", out.report.all_pass())?;
        Ok(d)
    }
}

/// A loaded scenario. `seed` and `p_user` can be changed before `run`.
#[pyclass(name = "Scenario")]
struct PyScenario(SimulationScenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SimulationScenario::load(path).map(PyScenario).map_err(err)
    }

    /// Defaults on the given network, no events.
    #[staticmethod]
    fn on_network(net: &PyNetwork) -> Self {
        PyScenario(SimulationScenario::with_network(net.0.clone()))
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.0.seed = v;
    }

    #[getter]
    fn p_user(&self) -> f64 {
        self.0.p_user
    }

    #[setter]
    fn set_p_user(&mut self, v: f64) {
        self.0.p_user = v;
    }

    #[getter]
    fn n_vel(&self) -> usize {
        self.0.n_vel
    }

    #[setter]
    fn set_n_vel(&mut self, v: usize) {
        self.0.n_vel = v;
    }

    #[getter]
    fn network(&self) -> PyNetwork {
        PyNetwork(self.0.network.clone())
    }

    #[getter]
    fn latency(&self) -> PyLatencyModel {
        PyLatencyModel(self.0.latency.clone())
    }

    /// Runs to completion and returns the metrics as a dict.
    fn run(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let sc = self.0.clone();
        let m = py.detach(|| sim::run(&sc)).map_err(err)?;
        let d = to_py(py, &m)?;
        d.bind(py).set_item("csv", m.to_csv())?;
        Ok(d)
    }
}

/// In-process route service speaking the same JSON lines as the TCP server.
#[pyclass(name = "Service")]
struct PyService(harness::ServiceState);

#[pymethods]
impl PyService {
    #[new]
    fn new(scenario: &PyScenario) -> Self {
        PyService(harness::ServiceState::new(&scenario.0))
    }

    fn handle(&mut self, line: &str) -> String {
        harness::handle_line(&mut self.0, line)
    }
}

#[pymodule]
fn twinroute_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyLatencyModel>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyService>()?;
    m.add_function(wrap_pyfunction!(journey_speed, m)?)?;
    m.add_function(wrap_pyfunction!(journey_time, m)?)?;
    m.add_function(wrap_pyfunction!(dijkstra, m)?)?;
    m.add_function(wrap_pyfunction!(mask_events, m)?)?;
    m.add_function(wrap_pyfunction!(request_distance, m)?)?;
    m.add_function(wrap_pyfunction!(check_deadline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
