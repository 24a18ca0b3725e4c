use num_complex::Complex64;
use pyo3::exceptions::{PyNotImplementedError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lqdescriptor::config::Tolerances;
use lqdescriptor::control;
use lqdescriptor::error::Error;
use lqdescriptor::io::{self, SystemFile};
use lqdescriptor::linalg::{CMat, CVec};
use lqdescriptor::lure::{self, LureSolution};
use lqdescriptor::palindromic::{self, build_palindromic};
use lqdescriptor::popov;
use lqdescriptor::system::{self, WeightedSystem};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(m) => PyValueError::new_err(m),
        Error::UnsupportedStructure(m) => PyNotImplementedError::new_err(m),
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

type Rows = Vec<Vec<Complex64>>;

fn mat(name: &str, rows: Rows) -> PyResult<CMat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err(format!("{name}: rows have different lengths")));
    }
    Ok(CMat::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &CMat) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vec_of(x0: Vec<Complex64>) -> CVec {
    CVec::from_vec(x0)
}

/// Weighted descriptor system `E x_{j+1} = A x_j + B u_j` with cost `[Q S; S* R]`.
#[pyclass(name = "System")]
struct PySystem {
    inner: WeightedSystem,
    tol: Tolerances,
}

#[pymethods]
impl PySystem {
    #[new]
    #[pyo3(signature = (e, a, b, q, s, r, seed = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(e: Rows, a: Rows, b: Rows, q: Rows, s: Rows, r: Rows, seed: Option<u64>) -> PyResult<Self> {
        let mut tol = Tolerances::default();
        if let Some(sd) = seed {
            tol.seed = sd;
        }
        let (n, m) = (e.len(), r.len());
        let mut b = mat("B", b)?;
        let mut s = mat("S", s)?;
        // nested lists lose the column count when there are no inputs
        if m == 0 {
            b = CMat::zeros(n, 0);
            s = CMat::zeros(n, 0);
        }
        let sys = system::DescriptorSystem::new_with(mat("E", e)?, mat("A", a)?, b, &tol).map_err(to_py)?;
        let inner = WeightedSystem::new(sys, mat("Q", q)?, s, mat("R", r)?).map_err(to_py)?;
        Ok(PySystem { inner, tol })
    }

    /// Builds a system from the JSON system-file text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let tol = Tolerances::default();
        let f: SystemFile = io::parse_json(text, "system file").map_err(to_py)?;
        let (inner, _) = f.to_system(&tol).map_err(to_py)?;
        Ok(PySystem { inner, tol })
    }

    fn to_json(&self) -> String {
        io::to_json_pretty(&SystemFile::from_system(&self.inner))
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    /// Sizes `(n1, n2, n3)` of the feedback equivalence form.
    fn fef_dims(&self) -> PyResult<(usize, usize, usize)> {
        let f = system::feedback_form(&self.inner, &self.tol).map_err(to_py)?;
        Ok((f.n1, f.n2, f.n3))
    }

    fn popov_rank(&self) -> PyResult<usize> {
        popov::popov_normal_rank(&self.inner, &self.tol).map_err(to_py)
    }

    /// Smallest eigenvalue of the Popov function at `e^{i omega}`, `None` at poles.
    fn popov_min_eig(&self, omega: f64) -> Option<f64> {
        let s = popov::popov_eval(&self.inner, omega, &self.tol);
        s.defined.then(|| lqdescriptor::linalg::min_herm_eig(&s.value))
    }

    fn kyp_feasible(&self, p: Rows) -> PyResult<bool> {
        let rep = popov::kyp_check(&self.inner, &mat("P", p)?, &self.tol).map_err(to_py)?;
        Ok(rep.feasible)
    }

    /// Inertia triple of the palindromic pencil at `e^{i omega}`.
    fn inertia_at(&self, omega: f64) -> (usize, usize, usize) {
        let t = palindromic::inertia_at_omega(&build_palindromic(&self.inner), omega, &self.tol);
        (t.n_plus, t.n_zero, t.n_minus)
    }

    fn positivity_certified(&self) -> PyResult<bool> {
        let q = popov::popov_normal_rank(&self.inner, &self.tol).map_err(to_py)?;
        let c = palindromic::pkcf_census(&build_palindromic(&self.inner), q, &self.tol).map_err(to_py)?;
        Ok(c.positivity_certified)
    }

    /// Stabilizing Lur'e solution as a dict with `X`, `K`, `L`, `q`, `passes`.
    fn lure_solve<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let sol = lure::lure_solve(&self.inner, &self.tol).map_err(to_py)?;
        let cert = lure::lure_verify(&self.inner, &sol, &self.tol).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("X", rows(&sol.x))?;
        d.set_item("K", rows(&sol.k))?;
        d.set_item("L", rows(&sol.l))?;
        d.set_item("q", sol.q())?;
        d.set_item("residual", cert.residual_on_v)?;
        d.set_item("stabilizing", cert.stabilizing)?;
        d.set_item("passes", cert.passes(&self.tol))?;
        Ok(d)
    }

    fn lure_verify(&self, x: Rows, k: Rows, l: Rows) -> PyResult<bool> {
        let (n, m) = (self.inner.n(), self.inner.m());
        let q = k.len();
        let k = if q == 0 { CMat::zeros(0, n) } else { mat("K", k)? };
        let l = if q == 0 { CMat::zeros(0, m) } else { mat("L", l)? };
        let sol = LureSolution { x: mat("X", x)?, k, l };
        let cert = lure::lure_verify(&self.inner, &sol, &self.tol).map_err(to_py)?;
        Ok(cert.passes(&self.tol))
    }

    fn optimal_value(&self, x0: Vec<Complex64>) -> PyResult<f64> {
        let sol = lure::lure_solve(&self.inner, &self.tol).map_err(to_py)?;
        control::optimal_value(&self.inner, &sol, &vec_of(x0), &self.tol).map_err(to_py)
    }

    /// Optimal trajectory: dict with `x`, `u`, `partial_sums` and residuals.
    fn synthesize<'py>(&self, py: Python<'py>, x0: Vec<Complex64>, horizon: usize) -> PyResult<Bound<'py, PyDict>> {
        let sol = lure::lure_solve(&self.inner, &self.tol).map_err(to_py)?;
        let r = control::synthesize(&self.inner, &sol, &vec_of(x0), horizon, &self.tol).map_err(to_py)?;
        let d = PyDict::new(py);
        let xs: Vec<Vec<Complex64>> = r.trajectory.x.iter().map(|v| v.iter().copied().collect()).collect();
        let us: Vec<Vec<Complex64>> = r.trajectory.u.iter().map(|v| v.iter().copied().collect()).collect();
        d.set_item("x", xs)?;
        d.set_item("u", us)?;
        d.set_item("partial_sums", r.objective.partial.clone())?;
        d.set_item("optimal_value", r.optimal_value)?;
        d.set_item("uniqueness", r.uniqueness)?;
        d.set_item("energy_residual", r.energy_residual)?;
        Ok(d)
    }

    fn oracle(&self, x0: Vec<Complex64>, horizon: usize) -> PyResult<f64> {
        Ok(control::finite_horizon_oracle(&self.inner, &vec_of(x0), horizon, &self.tol).map_err(to_py)?.value)
    }

    fn feasible(&self) -> PyResult<bool> {
        Ok(control::feasibility(&self.inner, &self.tol).map_err(to_py)?.feasible)
    }
}

#[pymodule]
fn lqdpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add("DEFAULT_SEED", lqdescriptor::config::DEFAULT_SEED)?;
    Ok(())
}
