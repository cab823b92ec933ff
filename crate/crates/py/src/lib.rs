//! Python bindings: gossip matrices, the level quantizer and its wire codec,
//! random Fourier features, the KLR learner pieces, full simulations and the
//! experiment commands.

use std::path::PathBuf;
use std::sync::Arc;

use gomkl::data::{self, Dataset, Partition};
use gomkl::experiment::{self, ExperimentConfig, ExperimentError};
use gomkl::graph::{self, Topology, TopologyKind};
use gomkl::learner::{self, Label};
use gomkl::protocol::{self, Execution, GammaChoice, QuantizerChoice, SimulationConfig};
use gomkl::quantizer::{self, QuantizerSpec};
use gomkl::rf_kernel::{self, GaussianKernel};
use gomkl::rng::{stream, Purpose};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn topology(kind: &str, nodes: usize, edges: Option<Vec<(usize, usize)>>) -> PyResult<Topology> {
    let kind: TopologyKind = kind.parse().map_err(PyValueError::new_err)?;
    Topology::build(kind, nodes, edges.as_deref()).map_err(value_err)
}

fn label(y: f64) -> PyResult<Label> {
    Label::try_from(y).map_err(value_err)
}

/// Metropolis–Hastings gossip matrix as a list of rows.
#[pyfunction]
#[pyo3(signature = (kind, nodes, edges=None))]
fn metropolis_weights(kind: &str, nodes: usize, edges: Option<Vec<(usize, usize)>>) -> PyResult<Vec<Vec<f64>>> {
    let w = graph::metropolis_weights(&topology(kind, nodes, edges)?).map_err(value_err)?;
    Ok((0..nodes).map(|i| (0..nodes).map(|j| w.weight(i, j)).collect()).collect())
}

/// `(rho, beta)`: spectral gap and `‖I − W‖₂` of the gossip matrix.
#[pyfunction]
#[pyo3(signature = (kind, nodes, edges=None))]
fn spectral_quantities(kind: &str, nodes: usize, edges: Option<Vec<(usize, usize)>>) -> PyResult<(f64, f64)> {
    let w = graph::metropolis_weights(&topology(kind, nodes, edges)?).map_err(value_err)?;
    Ok((w.rho(), w.beta()))
}

/// `(gamma, c)` for the given spectral quantities and compression parameter.
#[pyfunction]
fn consensus_step_size(rho: f64, beta: f64, delta: f64) -> PyResult<(f64, f64)> {
    let s = graph::consensus_step_size(rho, beta, delta).map_err(value_err)?;
    Ok((s.gamma, s.c))
}

#[pyfunction]
fn compression_delta(half_dim: usize, levels: u32) -> f64 {
    quantizer::compression_delta(half_dim, levels)
}

/// Stochastic level quantizer, or the identity when `levels` is `None`.
#[pyclass(name = "Quantizer", frozen)]
struct PyQuantizer {
    spec: QuantizerSpec,
}

#[pymethods]
impl PyQuantizer {
    #[new]
    #[pyo3(signature = (dim, levels=None))]
    fn new(dim: usize, levels: Option<u32>) -> PyResult<Self> {
        let spec = match levels {
            Some(m) => QuantizerSpec::levels(m, dim).map_err(value_err)?,
            None => QuantizerSpec::identity(dim),
        };
        Ok(PyQuantizer { spec })
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.spec.delta()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    #[getter]
    fn payload_bytes(&self) -> usize {
        self.spec.payload_bytes()
    }

    /// Compresses `v` with a random stream derived from `seed` and returns the
    /// wire encoding.
    fn compress<'py>(&self, py: Python<'py>, v: Vec<f64>, seed: u64) -> PyResult<Bound<'py, PyBytes>> {
        let mut rng = stream(seed, Purpose::Probe, &[]);
        let msg = self.spec.compress(&v, &mut rng).map_err(value_err)?;
        Ok(PyBytes::new(py, &msg.encode_wire().map_err(value_err)?))
    }

    /// Decodes a wire payload into the reconstructed vector.
    fn decode(&self, payload: &[u8]) -> PyResult<Vec<f64>> {
        self.spec.decode_wire(payload).and_then(|m| m.decode()).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Quantizer({}, dim={})", self.spec.label(), self.spec.dim())
    }
}

/// Random Fourier features for a Gaussian kernel.
#[pyclass(name = "FeatureMap", frozen)]
struct PyFeatureMap {
    map: rf_kernel::FeatureMap,
}

#[pymethods]
impl PyFeatureMap {
    #[new]
    fn new(sigma: f64, features: usize, input_dim: usize, seed: u64) -> PyResult<Self> {
        let kernel = GaussianKernel::new(sigma).map_err(value_err)?;
        let mut rng = stream(seed, Purpose::FeatureMap, &[]);
        let map = rf_kernel::FeatureMap::sample(&kernel, features, input_dim, &mut rng).map_err(value_err)?;
        Ok(PyFeatureMap { map })
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.map.sigma()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.map.output_dim()
    }

    fn features(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.map.features(&x).map_err(value_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = Vec::new();
        self.map.write_to(&mut buf).map_err(value_err)?;
        Ok(PyBytes::new(py, &buf))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyFeatureMap {
            map: rf_kernel::FeatureMap::read_from(data).map_err(value_err)?,
        })
    }
}

#[pyfunction]
fn gaussian_kernel(sigma: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    GaussianKernel::new(sigma).and_then(|k| k.eval(&x, &y)).map_err(value_err)
}

#[pyfunction]
fn klr_value(theta: Vec<f64>, z: Vec<f64>, y: f64, lam: f64) -> PyResult<f64> {
    learner::klr_value(&theta, &z, y, lam).map_err(value_err)
}

#[pyfunction]
fn klr_gradient(theta: Vec<f64>, z: Vec<f64>, y: f64, lam: f64) -> PyResult<Vec<f64>> {
    learner::klr_gradient(&theta, &z, y, lam).map_err(value_err)
}

/// Hedge weights over a set of kernels.
#[pyclass(name = "KernelWeights")]
struct PyKernelWeights {
    inner: learner::KernelWeights,
}

#[pymethods]
impl PyKernelWeights {
    #[new]
    fn new(kernels: usize) -> PyResult<Self> {
        Ok(PyKernelWeights {
            inner: learner::KernelWeights::uniform(kernels).map_err(value_err)?,
        })
    }

    fn hedge_update(&mut self, losses: Vec<f64>, eta: f64) -> PyResult<()> {
        self.inner.hedge_update(&losses, eta).map_err(value_err)
    }

    #[getter]
    fn normalized(&self) -> Vec<f64> {
        self.inner.normalized().to_vec()
    }
}

fn dataset_from(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Dataset> {
    let d = x.first().map_or(0, Vec::len);
    if x.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows of x must have equal length"));
    }
    let labels = y.into_iter().map(label).collect::<PyResult<Vec<_>>>()?;
    Dataset::new("python", "in-memory arrays".to_string(), d, x.concat(), labels).map_err(value_err)
}

fn dataset_to_py(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    (ds.rows().map(<[f64]>::to_vec).collect(), ds.labels().iter().map(|l| l.sign()).collect())
}

/// Two Gaussian clusters; returns `(x, y)` with labels in {−1, +1}.
#[pyfunction]
#[pyo3(signature = (samples, dim=2, separation=2.0, seed=0))]
fn make_synthetic(samples: usize, dim: usize, separation: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    Ok(dataset_to_py(&data::make_synthetic(samples, dim, separation, seed).map_err(value_err)?))
}

/// Two noisy half-moons; returns `(x, y)`.
#[pyfunction]
#[pyo3(signature = (samples, noise=0.2, seed=0))]
fn make_banana(samples: usize, noise: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    Ok(dataset_to_py(&data::make_banana(samples, noise, seed).map_err(value_err)?))
}

/// Runs the protocol on `(x, y)` split across `nodes` streams. `gamma=None`
/// derives the consensus step size from the spectrum; `quantizer` is a level
/// count or `"identity"`.
#[pyfunction]
#[pyo3(signature = (
    x, y, nodes=20, rounds=None, features=20, eta=0.01, gamma=Some(0.009), lam=0.001,
    sigmas=vec![1.0, 3.0, 5.0], quantizer="7", topology="path", seed=0, parallel=false, standardize=true
))]
#[allow(clippy::too_many_arguments)]
fn run_simulation<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    nodes: usize,
    rounds: Option<usize>,
    features: usize,
    eta: f64,
    gamma: Option<f64>,
    lam: f64,
    sigmas: Vec<f64>,
    quantizer: &str,
    topology: &str,
    seed: u64,
    parallel: bool,
    standardize: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut ds = dataset_from(x, y)?;
    if standardize {
        ds.standardize();
    }
    let quantizer = match quantizer {
        "identity" => QuantizerChoice::Identity,
        m => QuantizerChoice::Levels(m.parse().map_err(|_| PyValueError::new_err(format!("bad quantizer `{m}`")))?),
    };
    let config = SimulationConfig {
        nodes,
        rounds,
        features,
        eta,
        gamma: gamma.map_or(GammaChoice::Lemma, GammaChoice::Fixed),
        lambda: lam,
        sigmas,
        quantizer,
        topology: topology.parse().map_err(PyValueError::new_err)?,
        custom_edges: None,
        seed,
        execution: if parallel { Execution::Parallel } else { Execution::Sequential },
    };
    let part = Partition::new(Arc::new(ds), nodes, seed).map_err(value_err)?;
    let out = py
        .detach(|| protocol::run_simulation(&config, &part))
        .map_err(|e| match e {
            protocol::ProtocolError::Config(m) => PyValueError::new_err(m),
            other => PyRuntimeError::new_err(other.to_string()),
        })?;
    let mut csv = Vec::new();
    out.metrics.write_csv(&mut csv).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let result = PyDict::new(py);
    result.set_item("average_loss_curve", out.metrics.average_loss_curve())?;
    result.set_item("final_average_loss", out.metrics.final_average_loss())?;
    result.set_item("bits_per_node", out.metrics.bits_per_node())?;
    result.set_item("max_grad_norm", out.metrics.max_grad_norm)?;
    result.set_item("gamma", out.network.protocol().gamma)?;
    let weights: Vec<Vec<f64>> = out.network.nodes().iter().map(|n| n.weights.normalized().to_vec()).collect();
    result.set_item("kernel_weights", weights)?;
    result.set_item("metrics_csv", String::from_utf8(csv).expect("CSV output is UTF-8"))?;
    Ok(result)
}

fn experiment_err(e: ExperimentError) -> PyErr {
    match e {
        ExperimentError::Config(lines) => PyValueError::new_err(lines.join("\n")),
        ExperimentError::Runtime(m) => PyRuntimeError::new_err(m),
    }
}

/// Runs `run`, `sweep-topology` or `sweep-quantization` on a config file and
/// returns the summary text.
#[pyfunction]
#[pyo3(signature = (command, config_path, out=None, seeds=None))]
fn run_experiment(
    py: Python<'_>,
    command: &str,
    config_path: PathBuf,
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
) -> PyResult<String> {
    let mut config = ExperimentConfig::load(&config_path).map_err(experiment_err)?;
    if let Some(s) = seeds {
        config = config.with_seeds(s).map_err(experiment_err)?;
    }
    if let Some(o) = out {
        config = config.with_out(o);
    }
    let cmd = match command {
        "run" => experiment::cmd_run,
        "sweep-topology" => experiment::cmd_sweep_topology,
        "sweep-quantization" => experiment::cmd_sweep_quantization,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    py.detach(|| cmd(&config)).map(|r| r.summary).map_err(experiment_err)
}

#[pymodule]
fn pygomkl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(metropolis_weights, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_quantities, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_step_size, m)?)?;
    m.add_function(wrap_pyfunction!(compression_delta, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(klr_value, m)?)?;
    m.add_function(wrap_pyfunction!(klr_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(make_banana, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<PyQuantizer>()?;
    m.add_class::<PyFeatureMap>()?;
    m.add_class::<PyKernelWeights>()?;
    Ok(())
}
