//! Python bindings for the core types and operations: mixing matrices, the
//! learning kernel, Laplace perturbation, the bound evaluator, synthetic
//! streams, and the sweep runner.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use privlearn::config::ExperimentConfig;
use privlearn::data::{self, SparseVector, SyntheticModel};
use privlearn::evaluation::{self, BoundInputs};
use privlearn::learning;
use privlearn::privacy;
use privlearn::sweep;
use privlearn::topology::{self, TopologyKind};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "MixingMatrix")]
struct PyMixingMatrix {
    inner: topology::MixingMatrix,
}

#[pymethods]
impl PyMixingMatrix {
    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.inner.node_count())
            .map(|i| self.inner.row(i).to_vec())
            .collect()
    }

    /// None when the matrix satisfies the doubly stochastic conditions,
    /// otherwise a description of the first violation.
    fn validate(&self) -> Option<String> {
        topology::validate_mixing_matrix(&self.inner)
            .err()
            .map(|v| v.to_string())
    }

    /// One gossip averaging step applied to per-node vectors.
    fn apply(&self, vectors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        if vectors.len() != self.inner.node_count() {
            return Err(value_err("need one vector per node"));
        }
        Ok(self.inner.apply(&vectors))
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }
}

#[pyclass(name = "Schedule")]
struct PySchedule {
    inner: learning::Schedule,
}

#[pymethods]
impl PySchedule {
    #[getter]
    fn step_size(&self) -> f64 {
        self.inner.step_size
    }

    #[getter]
    fn lambda_t(&self) -> f64 {
        self.inner.lambda_t
    }

    #[getter]
    fn lambda_base(&self) -> f64 {
        self.inner.lambda_base
    }
}

/// Builds the Metropolis-weight gossip matrix for a topology family.
#[pyfunction]
#[pyo3(signature = (kind, nodes, p=None, seed=None))]
fn build_mixing_matrix(
    kind: &str,
    nodes: usize,
    p: Option<f64>,
    seed: Option<u64>,
) -> PyResult<PyMixingMatrix> {
    let kind = match kind {
        "ring" => TopologyKind::Ring,
        "grid" => TopologyKind::Grid,
        "complete" => TopologyKind::Complete,
        "random" => TopologyKind::Random {
            p: p.ok_or_else(|| value_err("random topology needs p"))?,
            seed: seed.unwrap_or(0),
        },
        other => return Err(value_err(format!("unknown topology kind `{other}`"))),
    };
    let graph = topology::build_graph(kind, nodes).map_err(value_err)?;
    Ok(PyMixingMatrix {
        inner: topology::metropolis_weights(&graph),
    })
}

#[pyfunction]
fn mirror_map(dual: Vec<f64>) -> PyResult<Vec<f64>> {
    learning::mirror_map(&dual).map_err(value_err)
}

#[pyfunction]
fn soft_threshold(pre_image: Vec<f64>, lambda: f64) -> PyResult<Vec<f64>> {
    learning::soft_threshold(&pre_image, lambda).map_err(value_err)
}

fn sparse(indices: Vec<usize>, values: Vec<f64>) -> PyResult<SparseVector> {
    SparseVector::try_new(indices, values).map_err(value_err)
}

#[pyfunction]
fn hinge_loss(
    weights: Vec<f64>,
    indices: Vec<usize>,
    values: Vec<f64>,
    label: i8,
) -> PyResult<f64> {
    learning::hinge_loss(&weights, &sparse(indices, values)?, label).map_err(value_err)
}

/// Returns the subgradient as (indices, values); empty outside the margin.
#[pyfunction]
fn hinge_subgradient(
    weights: Vec<f64>,
    indices: Vec<usize>,
    values: Vec<f64>,
    label: i8,
) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let g = learning::hinge_subgradient(&weights, &sparse(indices, values)?, label)
        .map_err(value_err)?;
    Ok(g.iter().unzip())
}

#[pyfunction]
fn auto_schedule(
    diameter: f64,
    grad_bound: f64,
    lambda_base: f64,
    nodes: usize,
    horizon: usize,
) -> PyResult<PySchedule> {
    learning::Schedule::auto(diameter, grad_bound, lambda_base, nodes, horizon)
        .map(|inner| PySchedule { inner })
        .map_err(value_err)
}

#[pyfunction]
fn sensitivity(step_size: f64, dimension: usize, grad_bound: f64) -> PyResult<f64> {
    privacy::sensitivity(step_size, dimension, grad_bound).map_err(value_err)
}

/// Seeded i.i.d. Laplace draws with density exp(-|x|/scale) / (2 scale).
#[pyfunction]
fn sample_laplace_vector(scale: f64, len: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    privacy::sample_laplace_vector(scale, len, &mut rng).map_err(value_err)
}

#[pyfunction]
fn laplace_cdf(x: f64, scale: f64) -> f64 {
    privacy::laplace_cdf(x, scale)
}

#[pyfunction]
#[pyo3(signature = (diameter, grad_bound, lambda_base, nodes, horizon, dimension, epsilon=None))]
#[allow(clippy::too_many_arguments)]
fn theoretical_bound(
    diameter: f64,
    grad_bound: f64,
    lambda_base: f64,
    nodes: usize,
    horizon: usize,
    dimension: usize,
    epsilon: Option<f64>,
) -> PyResult<f64> {
    evaluation::theoretical_bound(&BoundInputs {
        diameter,
        grad_bound,
        lambda_base,
        nodes,
        horizon,
        dimension,
        epsilon,
    })
    .map_err(value_err)
}

/// Unit-norm sparse classification stream from a seeded sparse ground
/// truth; returns (indices, values, label) triples.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn generate_stream(
    dimension: usize,
    true_support: usize,
    nnz_per_example: usize,
    noise_rate: f64,
    count: usize,
    model_seed: u64,
    stream_seed: u64,
) -> PyResult<Vec<(Vec<usize>, Vec<f64>, i8)>> {
    let model = SyntheticModel::new(
        dimension,
        true_support,
        nnz_per_example,
        noise_rate,
        model_seed,
    )
    .map_err(value_err)?;
    Ok(data::generate_stream(&model, count, stream_seed)
        .into_iter()
        .map(|ex| {
            let (indices, values) = ex.features.iter().unzip();
            (indices, values, ex.label)
        })
        .collect())
}

/// Runs every cell of a TOML experiment config, writing CSV artifacts under
/// `out_dir`; returns the path of the sweep summary.
#[pyfunction]
fn run_sweep(config_toml: &str, out_dir: &str) -> PyResult<String> {
    let config = ExperimentConfig::from_toml(config_toml).map_err(value_err)?;
    let report = sweep::run_sweep(&config, std::path::Path::new(out_dir))
        .map_err(|e| PyIOError::new_err(e.to_string()))?;
    Ok(report.summary_path.display().to_string())
}

#[pymodule]
fn privlearn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMixingMatrix>()?;
    m.add_class::<PySchedule>()?;
    m.add_function(wrap_pyfunction!(build_mixing_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(mirror_map, m)?)?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(hinge_loss, m)?)?;
    m.add_function(wrap_pyfunction!(hinge_subgradient, m)?)?;
    m.add_function(wrap_pyfunction!(auto_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(sample_laplace_vector, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_bound, m)?)?;
    m.add_function(wrap_pyfunction!(generate_stream, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
