//! Python bindings: grids, base flows, the mode Poisson solver, 𝔍_k, kernel
//! norms, linear decay runs, budget-sized nonlinear runs, and the experiment
//! runner behind the `cbl` CLI.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cbl_core::base_flow::{assemble_base_flow, BaseFlow, DEFAULT_DELTA0};
use cbl_core::jk::{build_jk, commutator_norm, JkOperator};
use cbl_core::linear::{evolve_mode, fit_decay_rate, ActiveFields, DecayQuantity, LinearModeProblem};
use cbl_core::poisson::ModePoissonSolver;
use cbl_core::{ChannelGrid, ComplexVec, RealVec};
use cbl_harness::config::{self, ExperimentKind, Settings};
use cbl_harness::experiments::nonlinear::{max_energy_ratio, NonlinearSetup};
use cbl_harness::{run_experiment as harness_run, HarnessError, RunOptions};
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(cbl, CblError, PyException);

fn core_err(e: cbl_core::CblError) -> PyErr {
    CblError::new_err(e.to_string())
}

fn harness_err(e: HarnessError) -> PyErr {
    CblError::new_err(e.to_string())
}

fn cvec(grid: &ChannelGrid, v: Vec<Complex64>) -> PyResult<ComplexVec> {
    grid.check_len(v.len()).map_err(core_err)?;
    Ok(ComplexVec::from_vec(v))
}

fn rvec(grid: &ChannelGrid, v: Vec<f64>) -> PyResult<RealVec> {
    grid.check_len(v.len()).map_err(core_err)?;
    Ok(RealVec::from_vec(v))
}

fn to_list<T: Copy>(v: impl IntoIterator<Item = T>) -> Vec<T> {
    v.into_iter().collect()
}

/// Chebyshev–Gauss–Lobatto grid on `[-1, 1]` with `n_y + 1` nodes.
#[pyclass(name = "Grid", frozen)]
struct PyGrid {
    inner: Arc<ChannelGrid>,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(n_y: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(ChannelGrid::new(n_y).map_err(core_err)?),
        })
    }

    #[getter]
    fn n_y(&self) -> usize {
        self.inner.n_y()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn nodes(&self) -> Vec<f64> {
        to_list(self.inner.nodes().iter().copied())
    }

    /// Clenshaw–Curtis weights.
    fn weights(&self) -> Vec<f64> {
        to_list(self.inner.quad_weights().iter().copied())
    }

    fn norm(&self, f: Vec<Complex64>) -> PyResult<f64> {
        Ok(self.inner.norm(&cvec(&self.inner, f)?))
    }

    fn h4_norm(&self, f: Vec<f64>) -> PyResult<f64> {
        self.inner.sobolev_h4_norm(&rvec(&self.inner, f)?).map_err(core_err)
    }

    fn __repr__(&self) -> String {
        format!("Grid(n_y={})", self.inner.n_y())
    }
}

/// Steady base flow `U` with `U' = 1 + W`.
#[pyclass(name = "BaseFlow", frozen)]
struct PyBaseFlow {
    inner: Arc<BaseFlow>,
}

#[pymethods]
impl PyBaseFlow {
    #[staticmethod]
    fn couette(grid: &PyGrid) -> Self {
        Self {
            inner: Arc::new(BaseFlow::couette(&grid.inner)),
        }
    }

    /// Assembles `U` from nodal values of `W`; `delta0` is the smallness budget.
    #[staticmethod]
    #[pyo3(signature = (grid, w, delta0 = DEFAULT_DELTA0))]
    fn from_w(grid: &PyGrid, w: Vec<f64>, delta0: f64) -> PyResult<Self> {
        let w = rvec(&grid.inner, w)?;
        Ok(Self {
            inner: Arc::new(assemble_base_flow(&grid.inner, &w, 0.0, delta0).map_err(core_err)?),
        })
    }

    #[getter]
    fn w_h4(&self) -> f64 {
        self.inner.w_h4
    }

    fn hypothesis_holds(&self) -> bool {
        self.inner.hypothesis_holds()
    }

    fn u(&self) -> Vec<f64> {
        to_list(self.inner.u.iter().copied())
    }
}

/// Dirichlet solver for `(∂_y² − k²)ψ = ω`.
#[pyclass(name = "PoissonSolver", frozen)]
struct PyPoisson {
    inner: ModePoissonSolver,
}

#[pymethods]
impl PyPoisson {
    #[new]
    fn new(grid: &PyGrid, k: i64) -> PyResult<Self> {
        Ok(Self {
            inner: ModePoissonSolver::new(k, grid.inner.clone()).map_err(core_err)?,
        })
    }

    fn solve(&self, omega: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let w = cvec(self.inner.grid(), omega)?;
        Ok(to_list(self.inner.solve(&w).map_err(core_err)?.iter().copied()))
    }

    /// Same solve by quadrature against the Green's function.
    fn solve_green(&self, omega: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let w = cvec(self.inner.grid(), omega)?;
        Ok(to_list(self.inner.solve_green(&w).map_err(core_err)?.iter().copied()))
    }

    fn laplacian(&self, psi: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let p = cvec(self.inner.grid(), psi)?;
        Ok(to_list(self.inner.apply_laplacian(&p).iter().copied()))
    }
}

/// Green's function `G_k(y, y')`.
#[pyfunction]
fn greens_gk(k: i64, y: f64, yp: f64) -> PyResult<f64> {
    cbl_core::poisson::greens_gk(k, y, yp).map_err(core_err)
}

/// The singular integral operator `𝔍_k`.
#[pyclass(name = "Jk", frozen)]
struct PyJk {
    inner: JkOperator,
}

#[pymethods]
impl PyJk {
    #[new]
    fn new(py: Python<'_>, grid: &PyGrid, k: i64) -> PyResult<Self> {
        let g = grid.inner.clone();
        let inner = py.detach(|| build_jk(k, g)).map_err(core_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn k(&self) -> i64 {
        self.inner.k()
    }

    fn apply(&self, f: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        let f = cvec(self.inner.grid(), f)?;
        Ok(to_list(self.inner.apply(&f).map_err(core_err)?.iter().copied()))
    }

    /// `(value, iterations, converged)` of the power-iteration norm estimate.
    fn norm_estimate(&self) -> (f64, usize, bool) {
        let n = self.inner.norm_estimate();
        (n.value, n.iterations, n.converged)
    }

    fn commutator_norm(&self) -> (f64, usize, bool) {
        let n = commutator_norm(&self.inner);
        (n.value, n.iterations, n.converged)
    }

    fn adjoint_defect(&self) -> f64 {
        self.inner.adjoint_defect()
    }
}

/// `L²` norms `[size, ∂_y, ∂_y', ∂_y∂_y']` of the two Taylor-remainder kernels at `k`.
#[pyfunction]
fn kernel_norms<'py>(py: Python<'py>, grid: &PyGrid, base: &PyBaseFlow, k: i64) -> PyResult<Bound<'py, PyDict>> {
    let (g, b) = (grid.inner.clone(), base.inner.clone());
    let (k1, k2) = py.detach(|| cbl_core::kernels::kernel_norms(k, &b, &g)).map_err(core_err)?;
    let d = PyDict::new(py);
    d.set_item("k1", k1.as_array().to_vec())?;
    d.set_item("k2", k2.as_array().to_vec())?;
    Ok(d)
}

/// `E_{θ,k}` of one mode.
#[pyfunction]
fn energy_theta(grid: &PyGrid, k: i64, theta: Vec<Complex64>, nu: f64) -> PyResult<f64> {
    let th = cvec(&grid.inner, theta)?;
    cbl_core::energy::energy_theta_k(&grid.inner, k, &th, nu).map_err(core_err)
}

/// θ-only Couette run from `sin(π(y+1)/2)`, fitted over `[horizon/3, horizon]`
/// in units of `ν^{-1/3}|k|^{-2/3}`.
#[pyfunction]
#[pyo3(signature = (grid, nu, k, horizon = 12.0, dt_scale = 0.05, sample_every = 10))]
fn linear_decay<'py>(
    py: Python<'py>,
    grid: &PyGrid,
    nu: f64,
    k: i64,
    horizon: f64,
    dt_scale: f64,
    sample_every: usize,
) -> PyResult<Bound<'py, PyDict>> {
    if k == 0 {
        return Err(PyValueError::new_err("k must be nonzero"));
    }
    let g = grid.inner.clone();
    let (fit, traj) = py
        .detach(|| -> cbl_core::Result<_> {
            let theta = g.sample_complex(|y| Complex64::new((std::f64::consts::PI * (y + 1.0) / 2.0).sin(), 0.0));
            let p = LinearModeProblem::new(g.clone(), k, 0, nu, nu, Arc::new(BaseFlow::couette(&g)))?
                .with_fields(ActiveFields::ThetaOnly)
                .with_initial(ComplexVec::zeros(g.len()), theta)?;
            let tau = nu.powf(-1.0 / 3.0) * (k.unsigned_abs() as f64).powf(-2.0 / 3.0);
            let traj = evolve_mode(&p, horizon * tau, dt_scale / k.unsigned_abs() as f64, sample_every)?;
            let fit = fit_decay_rate(&traj, DecayQuantity::ThetaWeighted, Some((horizon / 3.0 * tau, horizon * tau)))?;
            Ok((fit, traj))
        })
        .map_err(core_err)?;
    let d = PyDict::new(py);
    d.set_item("rate", fit.rate)?;
    d.set_item("r_squared", fit.r_squared)?;
    d.set_item("times", traj.times())?;
    d.set_item("values", traj.series(DecayQuantity::ThetaWeighted))?;
    Ok(d)
}

/// Full nonlinear run from budget-sized data times `multiplier` over
/// `horizon·min(μ, ν)^{-1/3}`.
#[pyfunction]
#[pyo3(signature = (mu, nu, multiplier = 1.0, n_y = 64, k_max = 8, eps = (0.01, 0.01), m = 1.0, horizon = 2.0, cfl = 0.2))]
#[allow(clippy::too_many_arguments)]
fn budget_run<'py>(
    py: Python<'py>,
    mu: f64,
    nu: f64,
    multiplier: f64,
    n_y: usize,
    k_max: usize,
    eps: (f64, f64),
    m: f64,
    horizon: f64,
    cfl: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut s = Settings::defaults(ExperimentKind::NonlinearRun);
    s.n_y = n_y;
    s.k_max = k_max;
    s.eps = [eps.0, eps.1];
    s.m = m;
    s.horizon = horizon;
    s.cfl = cfl;
    let (run, out) = py
        .detach(|| NonlinearSetup::new(&s).and_then(|setup| setup.budget_run(&s, mu, nu, multiplier, None)))
        .map_err(harness_err)?;
    let d = PyDict::new(py);
    d.set_item("classification", out.classification.as_str())?;
    d.set_item("max_energy_ratio", max_energy_ratio(&out))?;
    d.set_item("dt", run.dt)?;
    d.set_item("times", out.times())?;
    d.set_item("script_e_theta", to_list(out.records.iter().map(|r| r.energies.script_e_theta())))?;
    d.set_item("script_e_omega", to_list(out.records.iter().map(|r| r.energies.script_e_omega())))?;
    d.set_item("nonzero_omega", to_list(out.records.iter().map(|r| r.nonzero_omega)))?;
    Ok(d)
}

/// Runs one experiment kind (CLI subcommand name) from a JSON config string.
/// Returns `(exit_code, run_dir)`; invalid configs raise `ValueError`.
#[pyfunction]
#[pyo3(signature = (kind, config = "{}", out = None, jobs = None, plot = false))]
fn run_experiment(
    py: Python<'_>,
    kind: &str,
    config: &str,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    plot: bool,
) -> PyResult<(i32, String)> {
    let kind = ExperimentKind::ALL
        .into_iter()
        .find(|k| k.as_str() == kind)
        .ok_or_else(|| PyValueError::new_err(format!("unknown experiment kind {kind:?}")))?;
    let settings = config::parse(config, Path::new("<config>"), kind).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let opts = RunOptions { out, jobs, plot };
    let report = py.detach(|| harness_run(&settings, &opts)).map_err(harness_err)?;
    Ok((report.exit_code(), report.dir.display().to_string()))
}

/// `(text, exit_code)` of the report for a run directory.
#[pyfunction]
fn report(dir: PathBuf) -> (String, i32) {
    let r = cbl_harness::report::emit_report(&dir);
    (r.text, r.exit_code)
}

#[pymodule]
fn cbl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CblError", m.py().get_type::<CblError>())?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyBaseFlow>()?;
    m.add_class::<PyPoisson>()?;
    m.add_class::<PyJk>()?;
    m.add_function(wrap_pyfunction!(greens_gk, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_norms, m)?)?;
    m.add_function(wrap_pyfunction!(energy_theta, m)?)?;
    m.add_function(wrap_pyfunction!(linear_decay, m)?)?;
    m.add_function(wrap_pyfunction!(budget_run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
