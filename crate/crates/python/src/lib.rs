//! Python bindings. Matrices cross the boundary as lists of row lists
//! (anything indexable twice, numpy arrays included).

use dmresponse::linalg::SymmetricMatrix;
use dmresponse::models::{chain_hamiltonian, gapped_random as gapped_random_model};
use dmresponse::response::{dm_perturbation_replay, susceptibility_backward_replay, susceptibility_forward_replay};
use dmresponse::scf::{kernel_from_spec, scf_dm_response, scf_ground_state, scf_susceptibility, ScfConfig};
use dmresponse::sp2::{sp2_ground_state, Sp2Trace};
use dmresponse::{mixed, oracles, thermal, Error};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn sym(rows: &Rows) -> PyResult<SymmetricMatrix> {
    SymmetricMatrix::from_rows(rows).map_err(py_err)
}

/// Zero-temperature ground state together with its recorded branch
/// sequence; response methods replay that sequence.
#[pyclass(module = "dmresponse_py")]
struct GroundState {
    h0: SymmetricMatrix,
    d0: SymmetricMatrix,
    trace: Sp2Trace,
}

#[pymethods]
impl GroundState {
    #[new]
    fn new(h0: Rows, n_occ: usize) -> PyResult<Self> {
        let h0 = sym(&h0)?;
        let (d0, trace) = sp2_ground_state(&h0, n_occ, None).map_err(py_err)?;
        Ok(GroundState { h0, d0, trace })
    }

    #[getter]
    fn density(&self) -> Rows {
        self.d0.to_rows()
    }

    #[getter]
    fn m_steps(&self) -> usize {
        self.trace.m_steps
    }

    #[getter]
    fn sigmas(&self) -> Vec<i8> {
        self.trace.sigmas.clone()
    }

    #[getter]
    fn idempotency_log(&self) -> Vec<f64> {
        self.trace.idempotency_log.clone()
    }

    /// `Tr[A D0]`.
    fn expectation(&self, a: Rows) -> PyResult<f64> {
        let a = sym(&a)?;
        if a.dim() != self.d0.dim() {
            return Err(py_err(Error::DimensionMismatch {
                expected: self.d0.dim(),
                found: a.dim(),
            }));
        }
        Ok(a.trace_product(&self.d0))
    }

    /// First-order density matrix along `h1`.
    fn perturbation(&self, h1: Rows) -> PyResult<Rows> {
        let d1 = dm_perturbation_replay(&self.h0, &sym(&h1)?, &self.trace).map_err(py_err)?;
        Ok(d1.to_rows())
    }

    /// Susceptibility of `a`; `route` is `"forward"` or `"backward"`.
    #[pyo3(signature = (a, route = "forward"))]
    fn susceptibility(&self, a: Rows, route: &str) -> PyResult<Rows> {
        let a = sym(&a)?;
        let s = match route {
            "forward" => susceptibility_forward_replay(&self.h0, &a, &self.trace),
            "backward" => susceptibility_backward_replay(&self.h0, &a, &self.trace).map(|s| s.chi),
            other => return Err(PyValueError::new_err(format!("unknown route {other:?}"))),
        }
        .map_err(py_err)?;
        Ok(s.to_rows())
    }

    fn __repr__(&self) -> String {
        format!("GroundState(n={}, m_steps={})", self.d0.dim(), self.trace.m_steps)
    }
}

/// `{"a0", "direct", "dual_forward", "dual_backward", "oracle", ...}` for one system.
#[pyfunction]
#[pyo3(signature = (h0, a, h1, n_occ, beta_t = None))]
fn duality_audit<'py>(
    py: Python<'py>,
    h0: Rows,
    a: Rows,
    h1: Rows,
    n_occ: usize,
    beta_t: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = oracles::duality_audit(&sym(&h0)?, &sym(&a)?, &sym(&h1)?, n_occ, beta_t).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("a0", r.a0)?;
    d.set_item("direct", r.direct)?;
    d.set_item("dual_forward", r.dual_forward)?;
    d.set_item("dual_backward", r.dual_backward)?;
    d.set_item("oracle", r.oracle)?;
    d.set_item("max_relative_deviation", r.max_relative_deviation)?;
    d.set_item("m_steps", r.m_steps)?;
    if let Some(t) = r.thermal {
        d.set_item("thermal_direct", t.direct)?;
        d.set_item("thermal_dual", t.dual)?;
    }
    Ok(d)
}

/// Canonical finite-temperature derivative of the Fermi matrix along
/// `direction`, returning `(matrix, mu1)`.
#[pyfunction]
fn thermal_derivative(h: Rows, direction: Rows, beta_t: f64, n_occ: f64) -> PyResult<(Rows, f64)> {
    let st = thermal::ThermalState::new(&sym(&h)?, beta_t, n_occ).map_err(py_err)?;
    let (m, mu1) = st.canonical_derivative(&sym(&direction)?).map_err(py_err)?;
    Ok((m.to_rows(), mu1))
}

/// Fermi matrix and chemical potential, `(D, mu0)`.
#[pyfunction]
fn fermi_density(h: Rows, beta_t: f64, n_occ: f64) -> PyResult<(Rows, f64)> {
    let (d, mu) = thermal::fermi_matrix_and_mu(&sym(&h)?, beta_t, n_occ).map_err(py_err)?;
    Ok((d.to_rows(), mu))
}

/// Self-consistent `(a0, Tr[A D1], Tr[chi H1])` with a kernel spec such as `"hubbard:0.1"`.
#[pyfunction]
#[pyo3(signature = (h_core, a, h1, n_occ, kernel = "zero", seed = 0, beta_t = None, overlap = None))]
#[allow(clippy::too_many_arguments)]
fn scf_response(
    h_core: Rows,
    a: Rows,
    h1: Rows,
    n_occ: usize,
    kernel: &str,
    seed: u64,
    beta_t: Option<f64>,
    overlap: Option<Rows>,
) -> PyResult<(f64, f64, f64)> {
    let h_core = sym(&h_core)?;
    let (a, h1) = (sym(&a)?, sym(&h1)?);
    let s = overlap.as_ref().map(sym).transpose()?;
    let g = kernel_from_spec(kernel, h_core.dim(), &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
    let cfg = ScfConfig {
        beta_t,
        ..ScfConfig::default()
    };
    let state = scf_ground_state(&h_core, s.as_ref(), g.as_ref(), n_occ, &cfg).map_err(py_err)?;
    let d1 = scf_dm_response(&state, g.as_ref(), &h1, &cfg).map_err(py_err)?;
    let chi = scf_susceptibility(&state, g.as_ref(), &a, &cfg).map_err(py_err)?;
    Ok((
        a.trace_product(&state.d),
        a.trace_product(&d1.matrix),
        chi.matrix.trace_product(&h1),
    ))
}

/// Reduced-precision merged recursion: `(D0, response, multiplications)`.
/// `precision` is `"f64"`, `"f32"` or `"split16"`.
#[pyfunction]
#[pyo3(signature = (h0, seed_matrix, n_occ, precision = "split16"))]
fn reduced_precision_response(h0: Rows, seed_matrix: Rows, n_occ: usize, precision: &str) -> PyResult<(Rows, Rows, usize)> {
    let p: mixed::Precision = precision.parse().map_err(py_err)?;
    let run = mixed::reduced_precision_pipeline(&sym(&h0)?, &sym(&seed_matrix)?, n_occ, p).map_err(py_err)?;
    Ok((run.d0.to_rows(), run.response.to_rows(), run.multiplications))
}

/// Nearest binary16 value (ties to even).
#[pyfunction]
fn round_binary16(x: f64) -> PyResult<f64> {
    mixed::round_binary16(x).map_err(py_err)
}

#[pyfunction]
fn chain(n: usize, gap: f64) -> Rows {
    chain_hamiltonian(n, gap).to_rows()
}

#[pyfunction]
#[pyo3(signature = (n, n_occ, gap, seed = 0, bandwidth = 2.0))]
fn gapped_random(n: usize, n_occ: usize, gap: f64, seed: u64, bandwidth: f64) -> PyResult<Rows> {
    let h = gapped_random_model(n, n_occ, gap, bandwidth, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
    Ok(h.to_rows())
}

#[pymodule]
fn dmresponse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GroundState>()?;
    m.add_function(wrap_pyfunction!(duality_audit, m)?)?;
    m.add_function(wrap_pyfunction!(thermal_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(fermi_density, m)?)?;
    m.add_function(wrap_pyfunction!(scf_response, m)?)?;
    m.add_function(wrap_pyfunction!(reduced_precision_response, m)?)?;
    m.add_function(wrap_pyfunction!(round_binary16, m)?)?;
    m.add_function(wrap_pyfunction!(chain, m)?)?;
    m.add_function(wrap_pyfunction!(gapped_random, m)?)?;
    Ok(())
}
