//! Python bindings: model specs, the three spin Chern methods, gaps, edge
//! currents and the config runner.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spinhall::edge::{self, Coupling, Edge, RibbonParams};
use spinhall::harness;
use spinhall::model;
use spinhall::realspace;
use spinhall::transfer;
use spinhall::Error;

create_exception!(spinhall_py, GuardError, PyRuntimeError, "A numerical guard fired; `args[1]` is its name.");

fn to_py(e: Error) -> PyErr {
    match e.guard() {
        Some(g) => GuardError::new_err((e.to_string(), g.to_string())),
        None => PyValueError::new_err(e.to_string()),
    }
}

/// Tight-binding model description (see `ModelSpec.kane_mele`).
#[pyclass(name = "ModelSpec")]
#[derive(Clone)]
struct PyModelSpec {
    inner: model::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// Clean spin-1/2 Kane-Mele model with unit hopping.
    #[staticmethod]
    #[pyo3(signature = (lambda_so, lambda_ra=0.0, lambda_ze=0.0, lambda_dis=0.0, seed=0))]
    fn kane_mele(lambda_so: f64, lambda_ra: f64, lambda_ze: f64, lambda_dis: f64, seed: u64) -> PyResult<Self> {
        let inner = model::ModelSpec::kane_mele(lambda_so)
            .with_rashba(lambda_ra)
            .with_zeeman(lambda_ze)
            .with_disorder(lambda_dis, seed);
        inner.validate().map_err(to_py)?;
        Ok(PyModelSpec { inner })
    }

    /// Parses the JSON form used in experiment configs.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: model::ModelSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyModelSpec { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn lambda_so(&self) -> f64 {
        self.inner.lambda_so
    }

    #[getter]
    fn lambda_ra(&self) -> f64 {
        self.inner.lambda_ra
    }

    #[getter]
    fn lambda_ze(&self) -> f64 {
        self.inner.lambda_ze
    }

    #[getter]
    fn lambda_dis(&self) -> f64 {
        self.inner.lambda_dis
    }

    #[getter]
    fn e_g(&self) -> f64 {
        self.inner.e_g
    }

    fn conserves_sz(&self) -> bool {
        self.inner.conserves_sz()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec({:?}, s={}, lambda_SO={}, lambda_Ra={}, lambda_Ze={}, lambda_dis={}, seed={})",
            self.inner.lattice,
            self.inner.s,
            self.inner.lambda_so,
            self.inner.lambda_ra,
            self.inner.lambda_ze,
            self.inner.lambda_dis,
            self.inner.seed
        )
    }
}

/// Bloch Hamiltonian `H(k)` as a nested list of complex numbers.
#[pyfunction]
fn bloch_hamiltonian(spec: &PyModelSpec, k1: f64, k2: f64) -> PyResult<Vec<Vec<num_complex::Complex64>>> {
    let h = model::build(&spec.inner, &model::Geometry::BlochFiber { k: [k1, k2] }).map_err(to_py)?;
    Ok((0..h.dim()).map(|i| (0..h.dim()).map(|j| h.matrix[(i, j)]).collect()).collect())
}

/// Transfer-matrix spin Chern numbers: `{level: (SCh, phase_defect)}`.
#[pyfunction]
#[pyo3(signature = (spec, n_k=512, e_g=None))]
fn spin_chern_transfer(py: Python<'_>, spec: &PyModelSpec, n_k: usize, e_g: Option<f64>) -> PyResult<Py<PyDict>> {
    let e = e_g.unwrap_or(spec.inner.e_g);
    let blocks = py.allow_threads(|| transfer::spin_chern_transfer(&spec.inner, e, n_k)).map_err(to_py)?;
    let d = PyDict::new_bound(py);
    for (k, b) in blocks {
        d.set_item(k, (b.winding.ch, b.winding.phase_defect))?;
    }
    Ok(d.unbind())
}

/// Plaquette-oracle Chern number of spin level `l` (or of the whole band if `l` is None).
#[pyfunction]
#[pyo3(signature = (spec, l=None, n=48, e_g=None))]
fn fhs_chern(py: Python<'_>, spec: &PyModelSpec, l: Option<f64>, n: usize, e_g: Option<f64>) -> PyResult<i64> {
    let e = e_g.unwrap_or(spec.inner.e_g);
    py.allow_threads(|| match l {
        Some(l) => realspace::fhs_spin_chern(&spec.inner, l, e, n),
        None => realspace::fhs_total_chern(&spec.inner, e, n),
    })
    .map_err(to_py)
}

/// Real-space spin Chern markers on open `n x n` samples, one dict per seed.
///
/// Seeds that trip a guard are listed under `failed` as `(seed, guard)`.
#[pyfunction]
#[pyo3(signature = (spec, seeds=None, n=24, homotopy_lambda=1.0, window_fraction=0.25))]
fn spin_chern_realspace(
    py: Python<'_>,
    spec: &PyModelSpec,
    seeds: Option<Vec<u64>>,
    n: usize,
    homotopy_lambda: f64,
    window_fraction: f64,
) -> PyResult<Py<PyDict>> {
    let seeds = seeds.unwrap_or_else(|| vec![spec.inner.seed]);
    let (ok, failed) = py
        .allow_threads(|| realspace::spin_chern_disordered(&spec.inner, &seeds, homotopy_lambda, n, window_fraction))
        .map_err(to_py)?;
    let out = PyDict::new_bound(py);
    let mut rows = Vec::new();
    for sc in ok {
        let d = PyDict::new_bound(py);
        d.set_item("seed", sc.seed)?;
        d.set_item("min_island_gap", sc.min_island_gap)?;
        d.set_item("total", sc.total.raw)?;
        let levels = PyDict::new_bound(py);
        for (k, e) in sc.levels {
            levels.set_item(k, (e.raw, e.rounded))?;
        }
        d.set_item("levels", levels)?;
        rows.push(d);
    }
    out.set_item("seeds", rows)?;
    let failed: Vec<(u64, Option<&str>)> = failed.iter().map(|(s, e)| (*s, e.guard())).collect();
    out.set_item("failed", failed)?;
    Ok(out.unbind())
}

/// Bulk gap `(lo, hi)` of `H(lambda)` meeting `window`.
#[pyfunction]
#[pyo3(signature = (spec, window=(-0.5, 0.5), homotopy_lambda=1.0))]
fn bulk_gap(py: Python<'_>, spec: &PyModelSpec, window: (f64, f64), homotopy_lambda: f64) -> PyResult<(f64, f64)> {
    let r = py
        .allow_threads(|| edge::bulk_gap(&spec.inner, homotopy_lambda, window, &[spec.inner.seed]))
        .map_err(to_py)?;
    Ok(r.gap_interval)
}

fn parse_edge(edge: &str) -> PyResult<Edge> {
    match edge {
        "lower" => Ok(Edge::Lower),
        "upper" => Ok(Edge::Upper),
        other => Err(PyValueError::new_err(format!("edge must be 'lower' or 'upper', got {other:?}"))),
    }
}

/// Spin edge current of a ribbon in units of `1/(2 pi)`.
///
/// `g` is centred at `g_center` and has support `g_width`, both as fractions of the bulk gap.
#[pyfunction]
#[pyo3(signature = (spec, n2=48, n_k=512, g_center=0.5, g_width=0.5, edge="lower", homotopy_lambda=1.0, window=(-0.5, 0.5)))]
#[allow(clippy::too_many_arguments)]
fn edge_current(
    py: Python<'_>,
    spec: &PyModelSpec,
    n2: usize,
    n_k: usize,
    g_center: f64,
    g_width: f64,
    edge: &str,
    homotopy_lambda: f64,
    window: (f64, f64),
) -> PyResult<Py<PyDict>> {
    let which = parse_edge(edge)?;
    let r = py
        .allow_threads(|| {
            let seeds = [spec.inner.seed];
            let gap = edge::bulk_gap(&spec.inner, homotopy_lambda, window, &seeds)?;
            let g = edge::bump_g(gap.gap_interval, g_center, g_width)?;
            let params = RibbonParams::clean(n2, n_k);
            edge::edge_current(&spec.inner, homotopy_lambda, &params, &g, gap.gap_interval, which)
        })
        .map_err(to_py)?;
    let d = PyDict::new_bound(py);
    d.set_item("j_e", r.j_e)?;
    d.set_item("j_lower", r.j_lower)?;
    d.set_item("j_upper", r.j_upper)?;
    d.set_item("leakage", r.leakage)?;
    d.set_item("g_center", r.g_meta.e_c)?;
    d.set_item("g_width", r.g_meta.w)?;
    d.set_item("g_norm6", r.g_meta.norm6)?;
    d.set_item("residual_estimate", r.residual_estimate)?;
    d.set_item("profile", r.profile)?;
    Ok(d.unbind())
}

/// Lower-edge spin current versus a Rashba or Zeeman coupling.
#[pyfunction]
#[pyo3(signature = (spec, coupling, values, n2=48, n_k=512, g_center=0.5, g_width=0.5, window=(-0.5, 0.5)))]
#[allow(clippy::too_many_arguments)]
fn perturbation_scan(
    py: Python<'_>,
    spec: &PyModelSpec,
    coupling: &str,
    values: Vec<f64>,
    n2: usize,
    n_k: usize,
    g_center: f64,
    g_width: f64,
    window: (f64, f64),
) -> PyResult<Py<PyDict>> {
    let c = match coupling {
        "rashba" => Coupling::Rashba,
        "zeeman" => Coupling::Zeeman,
        other => return Err(PyValueError::new_err(format!("coupling must be 'rashba' or 'zeeman', got {other:?}"))),
    };
    let s = py
        .allow_threads(|| {
            let base = c.apply(&spec.inner, 0.0);
            let gap = edge::bulk_gap(&base, 1.0, window, &[spec.inner.seed])?;
            let g = edge::bump_g(gap.gap_interval, g_center, g_width)?;
            edge::perturbation_scan(&spec.inner, c, &values, &g, &RibbonParams::clean(n2, n_k), window)
        })
        .map_err(to_py)?;
    let d = PyDict::new_bound(py);
    d.set_item("j_e_zero", s.j_e_zero)?;
    d.set_item("values", s.rows.iter().map(|r| r.value).collect::<Vec<_>>())?;
    d.set_item("deviation", s.rows.iter().map(|r| r.deviation).collect::<Vec<_>>())?;
    d.set_item("comm_norm", s.rows.iter().map(|r| r.comm_norm).collect::<Vec<_>>())?;
    d.set_item("slope", s.slope)?;
    d.set_item("relative_fit_residual", s.relative_fit_residual)?;
    d.set_item("c_max", s.c_max)?;
    d.set_item("c_min", s.c_min)?;
    d.set_item("truncated_at", s.truncated_at)?;
    Ok(d.unbind())
}

/// Runs an experiment config like `spinhall run`; returns `(exit_code, message)`.
#[pyfunction]
#[pyo3(signature = (config, out=None, force_budget=false))]
fn run_config(py: Python<'_>, config: PathBuf, out: Option<PathBuf>, force_budget: bool) -> (i32, String) {
    let opts = harness::Options { out, force_budget };
    let o = py.allow_threads(|| harness::run(&config, &opts));
    (o.code, o.message)
}

#[pymodule]
fn spinhall_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GuardError", m.py().get_type_bound::<GuardError>())?;
    m.add_class::<PyModelSpec>()?;
    m.add_function(wrap_pyfunction!(bloch_hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(spin_chern_transfer, m)?)?;
    m.add_function(wrap_pyfunction!(fhs_chern, m)?)?;
    m.add_function(wrap_pyfunction!(spin_chern_realspace, m)?)?;
    m.add_function(wrap_pyfunction!(bulk_gap, m)?)?;
    m.add_function(wrap_pyfunction!(edge_current, m)?)?;
    m.add_function(wrap_pyfunction!(perturbation_scan, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
