//! Python bindings. Matrices cross the boundary as nested lists (row-major)
//! and modes are 1-indexed, as in the JSON formats.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use switchstab::stability::{self, DEFAULT_PSD_TOL};
use switchstab::synthesis::{self, GainSet, SearchMode, SynthesisConfig};
use switchstab::{builtin, renewal, reproduce, simulate};

create_exception!(switchstab_py, SwitchstabError, PyException);

fn err(e: switchstab::Error) -> PyErr {
    SwitchstabError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn to_matrix(rows: &Rows) -> PyResult<DMatrix<f64>> {
    switchstab::config::matrix_from_rows(rows, "matrix").map_err(err)
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    switchstab::config::matrix_to_rows(m)
}

#[pyclass(name = "ModeChain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModeChain {
    inner: switchstab::ModeChain,
}

#[pymethods]
impl PyModeChain {
    /// `P` row-stochastic, `r0` the 1-indexed initial mode.
    #[new]
    fn new(p: Rows, r0: usize) -> PyResult<Self> {
        if r0 == 0 {
            return Err(SwitchstabError::new_err("r0 is 1-indexed"));
        }
        let inner = switchstab::ModeChain::new(to_matrix(&p)?, r0 - 1).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn modes(&self) -> usize {
        self.inner.modes()
    }

    fn invariant_distribution(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.invariant_distribution().map_err(err)?.iter().cloned().collect())
    }

    fn l_step(&self, l: usize) -> Rows {
        to_rows(&self.inner.l_step(l))
    }

    fn eigenvalues(&self) -> Vec<(f64, f64)> {
        stability::transition_eigenvalues(&self.inner)
    }

    fn sample_path(&self, horizon: usize, seed: u64) -> Vec<usize> {
        self.inner.sample_path(horizon, seed).values.iter().map(|m| m + 1).collect()
    }

    fn monotonicity(&self, l_max: usize) -> (bool, Option<(usize, usize, usize)>) {
        let r = stability::monotonicity_check(&self.inner, l_max);
        (r.pass, r.first_violation)
    }
}

#[pyclass(name = "IntervalDistribution", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyIntervalDistribution {
    inner: switchstab::IntervalDistribution,
}

#[pymethods]
impl PyIntervalDistribution {
    #[staticmethod]
    fn explicit(probs: BTreeMap<usize, f64>) -> PyResult<Self> {
        Ok(Self { inner: switchstab::IntervalDistribution::explicit(&probs).map_err(err)? })
    }

    #[staticmethod]
    fn uniform(lo: usize, hi: usize) -> PyResult<Self> {
        Ok(Self { inner: switchstab::IntervalDistribution::uniform(lo, hi).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (theta, tail_tol = renewal::DEFAULT_TAIL_TOL))]
    fn geometric(theta: f64, tail_tol: f64) -> PyResult<Self> {
        Ok(Self { inner: switchstab::IntervalDistribution::geometric(theta, tail_tol).map_err(err)? })
    }

    #[staticmethod]
    fn periodic(period: usize) -> PyResult<Self> {
        Ok(Self { inner: switchstab::IntervalDistribution::periodic(period).map_err(err)? })
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn prob(&self, tau: usize) -> f64 {
        self.inner.prob(tau)
    }

    fn support(&self) -> Vec<(usize, f64)> {
        self.inner.support().collect()
    }

    #[getter]
    fn tail_mass(&self) -> f64 {
        self.inner.tail_mass()
    }

    fn observation_times(&self, horizon: usize, seed: u64) -> Vec<usize> {
        self.inner.sample_observation_times(horizon, seed).times
    }
}

#[pyclass(name = "SwitchedSystem", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySwitchedSystem {
    inner: switchstab::SwitchedSystem,
}

#[pymethods]
impl PySwitchedSystem {
    #[new]
    fn new(a: Vec<Rows>, b: Vec<Rows>) -> PyResult<Self> {
        let a = a.iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
        let b = b.iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: switchstab::SwitchedSystem::new(a, b).map_err(err)? })
    }

    #[getter]
    fn modes(&self) -> usize {
        self.inner.modes()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
}

#[pyclass(name = "Certificate", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCertificate {
    inner: switchstab::ZetaCertificate,
}

#[pymethods]
impl PyCertificate {
    #[new]
    fn new(zeta: Rows, r_tilde: Rows, l: Vec<Rows>) -> PyResult<Self> {
        let l = l.iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: switchstab::ZetaCertificate { zeta: to_matrix(&zeta)?, r_tilde: to_matrix(&r_tilde)?, l } })
    }

    #[getter]
    fn zeta(&self) -> Rows {
        to_rows(&self.inner.zeta)
    }

    #[getter]
    fn r_tilde(&self) -> Rows {
        to_rows(&self.inner.r_tilde)
    }

    #[getter]
    fn l(&self) -> Vec<Rows> {
        self.inner.l.iter().map(to_rows).collect()
    }

    /// `K_i = L_i R_tilde^{-1}`.
    fn gains(&self) -> PyResult<Vec<Rows>> {
        gains_from(to_rows(&self.inner.r_tilde), self.l())
    }
}

fn gain_matrices(gains: &[Rows]) -> PyResult<Vec<DMatrix<f64>>> {
    gains.iter().map(to_matrix).collect()
}

#[pyfunction]
fn gains_from(r_tilde: Rows, l: Vec<Rows>) -> PyResult<Vec<Rows>> {
    let g = synthesis::gains_from(&to_matrix(&r_tilde)?, &gain_matrices(&l)?).map_err(err)?;
    Ok(g.gains.iter().map(to_rows).collect())
}

/// Returns `(pass, [(i, j, min_eig, pass), ...])` with 1-indexed pairs.
#[pyfunction]
#[pyo3(signature = (system, certificate, tol = DEFAULT_PSD_TOL))]
fn check_condp(
    system: &PySwitchedSystem,
    certificate: &PyCertificate,
    tol: f64,
) -> PyResult<(bool, Vec<(usize, usize, f64, bool)>)> {
    let r = stability::check_condp(&system.inner, &certificate.inner, tol).map_err(err)?;
    Ok((r.pass, r.residuals.iter().map(|p| (p.i, p.j, p.min_eig, p.pass)).collect()))
}

/// Averaged log-growth; returns `(method, lhs)`.
#[pyfunction]
#[pyo3(signature = (chain, dist, zeta, force_general = false))]
fn condzeta_lhs(
    chain: &PyModeChain,
    dist: &PyIntervalDistribution,
    zeta: Rows,
    force_general: bool,
) -> PyResult<(String, f64)> {
    let (m, v) = stability::condzeta_lhs_auto(&chain.inner, &dist.inner, &to_matrix(&zeta)?, force_general).map_err(err)?;
    Ok((m.to_string(), v.lhs))
}

#[pyfunction]
fn ergodic_rate(chain: &PyModeChain, dist: &PyIntervalDistribution, zeta: Rows) -> PyResult<f64> {
    stability::ergodic_rate(&chain.inner, &dist.inner, &to_matrix(&zeta)?).map_err(err)
}

#[pyfunction]
fn check_theorem2<'py>(py: Python<'py>, chain: &PyModeChain, tau_bar: usize, zeta: Rows) -> PyResult<Bound<'py, PyDict>> {
    let r = stability::check_theorem2(&chain.inner, tau_bar, &to_matrix(&zeta)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pass", r.pass)?;
    d.set_item("eigenvalues", r.eigenvalues)?;
    d.set_item("positive_real_spectrum", r.positive_real_spectrum)?;
    d.set_item("zeta_ordering", r.zeta_ordering)?;
    d.set_item("tau_sum", r.tau_sum)?;
    d.set_item("failure", r.failure)?;
    Ok(d)
}

/// Grid search for a certificate; `tau_bar` switches to the bounded-gap conditions.
#[pyfunction]
#[pyo3(signature = (system, chain, dist, tau_bar = None))]
fn synthesize(
    system: &PySwitchedSystem,
    chain: &PyModeChain,
    dist: &PyIntervalDistribution,
    tau_bar: Option<usize>,
) -> PyResult<(PyCertificate, Vec<Rows>)> {
    let mode = tau_bar.map_or(SearchMode::Distribution, |tau_bar| SearchMode::BoundedGap { tau_bar });
    let g = synthesis::synthesize(&system.inner, &chain.inner, &dist.inner, &SynthesisConfig::default(), mode)
        .map_err(err)?;
    let cert = g.provenance.clone().expect("synthesized gains carry a certificate");
    Ok((PyCertificate { inner: cert }, g.gains.iter().map(to_rows).collect()))
}

/// Whether the given gains admit a certificate; returns `(pass, lhs)`.
#[pyfunction]
#[pyo3(signature = (system, chain, gains, dist, tau_bar = None))]
fn fixed_gain_feasibility(
    system: &PySwitchedSystem,
    chain: &PyModeChain,
    gains: Vec<Rows>,
    dist: &PyIntervalDistribution,
    tau_bar: Option<usize>,
) -> PyResult<(bool, f64)> {
    let mode = tau_bar.map_or(SearchMode::Distribution, |tau_bar| SearchMode::BoundedGap { tau_bar });
    let v = synthesis::fixed_gain_feasibility(
        &system.inner,
        &chain.inner,
        &gain_matrices(&gains)?,
        &dist.inner,
        mode,
        &SynthesisConfig::default(),
    )
    .map_err(err)?;
    Ok((v.pass, v.condzeta_lhs))
}

#[pyfunction]
#[pyo3(signature = (system, chain, dist, gains, x0, horizon = 200, trials = 100, seed = 1, threshold = 1e-4))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo<'py>(
    py: Python<'py>,
    system: &PySwitchedSystem,
    chain: &PyModeChain,
    dist: &PyIntervalDistribution,
    gains: Vec<Rows>,
    x0: Vec<f64>,
    horizon: usize,
    trials: usize,
    seed: u64,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let g = GainSet { gains: gain_matrices(&gains)?, provenance: None };
    let x0 = DVector::from_vec(x0);
    let r = py
        .detach(|| {
            simulate::monte_carlo(&system.inner, &chain.inner, &dist.inner, &g, &x0, horizon, trials, seed, threshold)
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("trials", r.trials)?;
    d.set_item("converged_fraction", r.converged_fraction)?;
    d.set_item("mean_final_log_norm", r.mean_final_log_norm)?;
    d.set_item("empirical_rate", r.empirical_rate)?;
    d.set_item("diverged", r.diverged)?;
    Ok(d)
}

#[pyfunction]
fn eta_exponent(chain: &PyModeChain, dist: &PyIntervalDistribution, zeta: Rows, horizon: usize, seed: u64) -> PyResult<f64> {
    simulate::eta_exponent(&chain.inner, &dist.inner, &to_matrix(&zeta)?, horizon, seed).map_err(err)
}

/// Built-in example: `(system, chain, observation, certificate, reference_gains)`.
#[pyfunction]
fn builtin_example(
    id: u32,
) -> PyResult<(PySwitchedSystem, PyModeChain, PyIntervalDistribution, PyCertificate, Vec<Rows>)> {
    let ex = builtin::example(id).ok_or_else(|| err(switchstab::Error::UnknownExample(id)))?;
    Ok((
        PySwitchedSystem { inner: ex.system },
        PyModeChain { inner: ex.chain },
        PyIntervalDistribution { inner: ex.observation },
        PyCertificate { inner: ex.certificate },
        ex.reference_gains.iter().map(to_rows).collect(),
    ))
}

/// Runs the checks for a built-in example: `[(name, pass, detail), ...]`.
#[pyfunction]
#[pyo3(signature = (id, seed = 1))]
fn reproduce_example(py: Python<'_>, id: u32, seed: u64) -> PyResult<Vec<(String, bool, String)>> {
    let checks = py.detach(|| reproduce::run(id, seed)).map_err(err)?;
    Ok(checks.into_iter().map(|c| (c.name, c.pass, c.detail)).collect())
}

#[pymodule]
fn switchstab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SwitchstabError", m.py().get_type::<SwitchstabError>())?;
    m.add_class::<PyModeChain>()?;
    m.add_class::<PyIntervalDistribution>()?;
    m.add_class::<PySwitchedSystem>()?;
    m.add_class::<PyCertificate>()?;
    m.add_function(wrap_pyfunction!(gains_from, m)?)?;
    m.add_function(wrap_pyfunction!(check_condp, m)?)?;
    m.add_function(wrap_pyfunction!(condzeta_lhs, m)?)?;
    m.add_function(wrap_pyfunction!(ergodic_rate, m)?)?;
    m.add_function(wrap_pyfunction!(check_theorem2, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_gain_feasibility, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(eta_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_example, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce_example, m)?)?;
    Ok(())
}
