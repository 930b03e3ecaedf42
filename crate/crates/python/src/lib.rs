//! Python bindings: penalty evaluation, instance generation, solving and
//! the quality metrics. Vectors cross the boundary as lists of floats.

use ndarray::Array1;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use spoq_core::cli::PenaltyArgs;
use spoq_core::experiment::{run_single, SolverKind};
use spoq_core::penalties::PenaltySpec;
use spoq_core::{DatasetPreset, SolverConfig, SpoqError, SpoqParams};

fn to_py(err: SpoqError) -> PyErr {
    match err {
        SpoqError::Domain(_) | SpoqError::Unsupported(_) | SpoqError::Initialization(_) => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn params(p: f64, q: f64, alpha: f64, beta: f64, eta: f64) -> PyResult<SpoqParams> {
    SpoqParams::new(p, q, alpha, beta, eta).map_err(to_py)
}

/// SPOQ penalty value.
#[pyfunction]
#[pyo3(signature = (x, p=0.75, q=2.0, alpha=7e-7, beta=3e-3, eta=0.1))]
fn spoq_value(x: Vec<f64>, p: f64, q: f64, alpha: f64, beta: f64, eta: f64) -> PyResult<f64> {
    let prm = params(p, q, alpha, beta, eta)?;
    spoq_core::spoq_value(Array1::from(x).view(), &prm).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, p=0.75, q=2.0, alpha=7e-7, beta=3e-3, eta=0.1))]
fn spoq_gradient(x: Vec<f64>, p: f64, q: f64, alpha: f64, beta: f64, eta: f64) -> PyResult<Vec<f64>> {
    let prm = params(p, q, alpha, beta, eta)?;
    spoq_core::spoq_gradient(Array1::from(x).view(), &prm)
        .map(|g| g.to_vec())
        .map_err(to_py)
}

/// Lipschitz constant of the SPOQ gradient in dimension `n`.
#[pyfunction]
#[pyo3(signature = (n, p=0.75, q=2.0, alpha=7e-7, beta=3e-3, eta=0.1))]
fn spoq_lipschitz(n: usize, p: f64, q: f64, alpha: f64, beta: f64, eta: f64) -> PyResult<f64> {
    Ok(spoq_core::spoq_lipschitz(&params(p, q, alpha, beta, eta)?, n))
}

#[pyfunction]
fn snr(x_true: Vec<f64>, x_hat: Vec<f64>) -> PyResult<f64> {
    spoq_core::snr(Array1::from(x_true).view(), Array1::from(x_hat).view()).map_err(to_py)
}

#[pyfunction]
fn tsnr(x_true: Vec<f64>, x_hat: Vec<f64>) -> PyResult<f64> {
    spoq_core::tsnr(Array1::from(x_true).view(), Array1::from(x_hat).view()).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, threshold=1e-4))]
fn sparsity_degree(x: Vec<f64>, threshold: f64) -> PyResult<usize> {
    spoq_core::sparsity_degree(Array1::from(x).view(), threshold).map_err(to_py)
}

/// A synthetic mass-spectrometry problem: dictionary, sparse truth and
/// noisy observation.
#[pyclass(name = "Instance", module = "spoq")]
struct PyInstance {
    inner: spoq_core::Instance,
}

#[pymethods]
impl PyInstance {
    /// `preset` is "a", "b" or "small".
    #[staticmethod]
    #[pyo3(signature = (preset="small", noise_percent=0.1, seed=0))]
    fn from_preset(preset: &str, noise_percent: f64, seed: u64) -> PyResult<Self> {
        let preset: DatasetPreset = preset.parse().map_err(to_py)?;
        spoq_core::Instance::from_preset(preset, noise_percent, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        spoq_core::Instance::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// `(samples, atoms)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.d.dim()
    }

    #[getter]
    fn x_true(&self) -> Vec<f64> {
        self.inner.x_true.to_vec()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y.to_vec()
    }

    #[getter]
    fn dictionary(&self) -> Vec<Vec<f64>> {
        self.inner.d.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// Radius of the data-fidelity ball.
    #[getter]
    fn xi(&self) -> f64 {
        self.inner.xi()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.meta.seed
    }

    #[getter]
    fn n_nonzero(&self) -> usize {
        self.inner.meta.n_nonzero
    }

    fn __repr__(&self) -> String {
        let (m, n) = self.inner.d.dim();
        format!(
            "Instance(samples={m}, atoms={n}, n_nonzero={}, noise_percent={}, seed={})",
            self.inner.meta.n_nonzero, self.inner.meta.noise_percent, self.inner.meta.seed
        )
    }
}

/// Output of [`solve`]: raw and debiased estimates plus the run report.
#[pyclass(name = "RunResult", module = "spoq", get_all)]
struct PyRunResult {
    x: Vec<f64>,
    debiased: Vec<f64>,
    objectives: Vec<f64>,
    snr_db: f64,
    tsnr_db: f64,
    raw_snr_db: f64,
    sparsity_estimate: usize,
    true_sparsity: usize,
    iterations: usize,
    stop_reason: String,
    solver: String,
    penalty: String,
    config_hash: String,
    wall_time: f64,
    trace_csv: String,
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(penalty={}, solver={}, snr_db={:.2}, sparsity={}, iterations={}, stop={})",
            self.penalty, self.solver, self.snr_db, self.sparsity_estimate, self.iterations, self.stop_reason
        )
    }
}

/// Warm start, solve, debias and score. Unset settings keep their defaults;
/// the solver defaults to the usual one for the penalty.
#[pyfunction]
#[pyo3(signature = (
    instance, penalty="spoq", solver=None, p=None, q=None, alpha=None, beta=None, eta=None,
    delta=None, a=None, theta=None, trials=None, gamma=None, eps=None, max_outer=None, max_inner=None
))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    instance: &PyInstance,
    penalty: &str,
    solver: Option<&str>,
    p: Option<f64>,
    q: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    eta: Option<f64>,
    delta: Option<f64>,
    a: Option<f64>,
    theta: Option<f64>,
    trials: Option<usize>,
    gamma: Option<f64>,
    eps: Option<f64>,
    max_outer: Option<usize>,
    max_inner: Option<usize>,
) -> PyResult<PyRunResult> {
    let spec: PenaltySpec = PenaltyArgs {
        penalty: penalty.into(),
        p,
        q,
        alpha,
        beta,
        eta,
        delta,
        a,
    }
    .to_spec()
    .map_err(to_py)?;
    let kind = match solver {
        Some(s) => s.parse::<SolverKind>().map_err(to_py)?,
        None => SolverKind::default_for(&spec),
    };
    let mut config = SolverConfig::default();
    config.theta = theta.unwrap_or(config.theta);
    config.trials = trials.unwrap_or(config.trials);
    config.gamma = gamma.unwrap_or(config.gamma);
    config.eps_stop = eps.unwrap_or(config.eps_stop);
    config.max_outer = max_outer.unwrap_or(config.max_outer);
    config.max_inner = max_inner.unwrap_or(config.max_inner);
    let inst = &instance.inner;
    let out = py
        .detach(|| run_single(inst, &spec, kind, &config))
        .map_err(to_py)?;
    let r = out.report;
    Ok(PyRunResult {
        x: out.output.x.to_vec(),
        debiased: out.debiased.to_vec(),
        objectives: out.output.trace.objectives(),
        snr_db: r.snr_db,
        tsnr_db: r.tsnr_db,
        raw_snr_db: r.raw_snr_db,
        sparsity_estimate: r.sparsity_estimate,
        true_sparsity: r.true_sparsity,
        iterations: r.iterations,
        stop_reason: r.stop_reason,
        solver: r.solver_id,
        penalty: r.penalty_id,
        config_hash: r.config_hash,
        wall_time: r.wall_time,
        trace_csv: out.output.trace.to_csv(),
    })
}

#[pymodule]
fn spoq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(spoq_value, m)?)?;
    m.add_function(wrap_pyfunction!(spoq_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(spoq_lipschitz, m)?)?;
    m.add_function(wrap_pyfunction!(snr, m)?)?;
    m.add_function(wrap_pyfunction!(tsnr, m)?)?;
    m.add_function(wrap_pyfunction!(sparsity_degree, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyRunResult>()?;
    Ok(())
}
