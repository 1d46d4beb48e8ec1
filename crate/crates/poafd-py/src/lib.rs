//! Python bindings: family construction, signals, decomposition runs and the
//! verification suites.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use poafd::engine::{self, SearchBox, SelectionConfig};
use poafd::kernels::{self, BoxGrid, ConvolutionProfile, KernelFamily, ParamPoint, QuadRule};
use poafd::run::{self, VerifyScope};
use poafd::signals;

fn err(e: poafd::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Family", frozen)]
struct PyFamily {
    inner: KernelFamily,
}

#[pymethods]
impl PyFamily {
    #[staticmethod]
    fn poisson(d: usize) -> PyResult<Self> {
        Ok(PyFamily {
            inner: KernelFamily::poisson_half_space(d).map_err(err)?,
        })
    }

    #[staticmethod]
    fn heat(d: usize) -> PyResult<Self> {
        Ok(PyFamily {
            inner: KernelFamily::heat_half_space(d).map_err(err)?,
        })
    }

    #[staticmethod]
    fn sphere(d: usize) -> PyResult<Self> {
        Ok(PyFamily {
            inner: KernelFamily::spherical_poisson(d).map_err(err)?,
        })
    }

    /// Convolution family from a named profile ("poisson" or "gaussian").
    /// Grid sizes control the quadrature used for every inner product.
    #[staticmethod]
    #[pyo3(signature = (d, profile, half_width = 30.0, steps = 600))]
    fn convolution(d: usize, profile: &str, half_width: f64, steps: usize) -> PyResult<Self> {
        let check = BoxGrid::symmetric(d, 2.0 * half_width, 4 * steps, QuadRule::Trapezoid)
            .map_err(err)?;
        let profile = match profile {
            "poisson" => ConvolutionProfile::poisson(d, &check),
            "gaussian" => ConvolutionProfile::gaussian(d, &check),
            other => Err(poafd::Error::Config(format!("unknown profile {other:?}"))),
        }
        .map_err(err)?;
        let quad = BoxGrid::symmetric(d, half_width, steps, QuadRule::Trapezoid).map_err(err)?;
        Ok(PyFamily {
            inner: KernelFamily::convolution(d, profile, quad).map_err(err)?,
        })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn kind(&self) -> String {
        format!("{}", self.inner.kind)
    }

    fn __repr__(&self) -> String {
        format!("Family({}, d={})", self.inner.kind, self.inner.d)
    }
}

#[pyclass(name = "Param", frozen, from_py_object)]
#[derive(Clone)]
struct PyParam {
    inner: ParamPoint,
}

#[pymethods]
impl PyParam {
    #[staticmethod]
    fn half_space(t: f64, x: Vec<f64>) -> Self {
        PyParam {
            inner: ParamPoint::half_space(t, x),
        }
    }

    #[staticmethod]
    fn ball(rho: f64, s: Vec<f64>) -> Self {
        PyParam {
            inner: ParamPoint::ball(rho, s),
        }
    }

    #[getter]
    fn coords(&self) -> (f64, Vec<f64>) {
        match &self.inner {
            ParamPoint::HalfSpace { t, x } => (*t, x.clone()),
            ParamPoint::Ball { rho, s } => (*rho, s.clone()),
        }
    }

    fn __repr__(&self) -> String {
        match &self.inner {
            ParamPoint::HalfSpace { t, x } => format!("Param.half_space({t}, {x:?})"),
            ParamPoint::Ball { rho, s } => format!("Param.ball({rho}, {s:?})"),
        }
    }
}

#[pyclass(name = "Atom", frozen, from_py_object)]
#[derive(Clone)]
struct PyAtom {
    inner: kernels::Atom,
}

#[pymethods]
impl PyAtom {
    #[new]
    #[pyo3(signature = (param, order = 1, direction = None))]
    fn new(param: PyParam, order: usize, direction: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = if order == 1 {
            kernels::Atom::plain(param.inner)
        } else {
            let dir = direction
                .ok_or_else(|| PyValueError::new_err("order > 1 needs a direction"))?;
            kernels::Atom::multiple(param.inner, order, dir).map_err(err)?
        };
        Ok(PyAtom { inner })
    }

    #[getter]
    fn param(&self) -> PyParam {
        PyParam {
            inner: self.inner.param.clone(),
        }
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order
    }

    #[getter]
    fn direction(&self) -> Option<Vec<f64>> {
        self.inner.direction.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Atom({:?}, order={})",
            self.inner.param, self.inner.order
        )
    }
}

#[pyclass(name = "Signal", frozen)]
struct PySignal {
    inner: signals::Signal,
}

#[pymethods]
impl PySignal {
    /// Kernel combination Σ c_j K̃_{q_j}: terms are (coefficient, Atom) pairs.
    #[staticmethod]
    fn combination(terms: Vec<(f64, PyAtom)>) -> Self {
        PySignal {
            inner: signals::Signal::combination(
                terms.into_iter().map(|(c, a)| (c, a.inner)).collect(),
            ),
        }
    }

    /// Sampled boundary data: rows of (point, value, weight).
    #[staticmethod]
    fn sampled(points: Vec<Vec<f64>>, values: Vec<f64>, weights: Vec<f64>) -> PyResult<Self> {
        Ok(PySignal {
            inner: signals::Signal::sampled(points, values, weights).map_err(err)?,
        })
    }

    fn norm(&self, family: &PyFamily) -> PyResult<f64> {
        signals::signal_norm(&family.inner, &self.inner).map_err(err)
    }

    fn inner_product(&self, family: &PyFamily, atom: &PyAtom) -> PyResult<f64> {
        signals::signal_inner(&family.inner, &self.inner, &atom.inner).map_err(err)
    }
}

#[pyclass(name = "Decomposition", frozen)]
struct PyDecomposition {
    inner: engine::Decomposition,
}

#[pymethods]
impl PyDecomposition {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn atoms(&self) -> Vec<PyAtom> {
        self.inner
            .atoms
            .iter()
            .map(|a| PyAtom { inner: a.clone() })
            .collect()
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.fourier_coeffs.clone()
    }

    #[getter]
    fn signal_norm(&self) -> f64 {
        self.inner.signal_norm
    }

    /// Relative remainder norm after each iteration.
    #[getter]
    fn relative_errors(&self) -> Vec<f64> {
        (1..=self.inner.len())
            .map(|k| engine::relative_error(&self.inner, k).unwrap_or(f64::NAN))
            .collect()
    }

    fn orthonormality_residual(&self, family: &PyFamily) -> PyResult<f64> {
        self.inner.orthonormality_residual(&family.inner).map_err(err)
    }

    /// Evaluate the reconstruction at boundary points.
    fn reconstruct(&self, family: &PyFamily, points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        signals::reconstruct_boundary(&family.inner, &self.inner, &points).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyDecomposition {
            inner: engine::Decomposition::from_json(text).map_err(err)?,
        })
    }
}

/// Run the greedy decomposition for `iterations` steps.
#[pyfunction]
#[pyo3(signature = (family, signal, iterations, refine = true, grid_steps = None,
                    t_min = None, t_max = None, x_half_width = None, rho_max = None,
                    weak_rho = None))]
#[allow(clippy::too_many_arguments)]
fn decompose(
    family: &PyFamily,
    signal: &PySignal,
    iterations: usize,
    refine: bool,
    grid_steps: Option<Vec<usize>>,
    t_min: Option<f64>,
    t_max: Option<f64>,
    x_half_width: Option<f64>,
    rho_max: Option<f64>,
    weak_rho: Option<f64>,
) -> PyResult<PyDecomposition> {
    let mut config = SelectionConfig::default_for(&family.inner);
    config.refine = refine;
    if let Some(steps) = grid_steps {
        config.grid_steps = steps;
    }
    if let Some(rho) = weak_rho {
        config.weak_rho = rho;
    }
    match &mut config.search_box {
        SearchBox::HalfSpace {
            t_min: lo,
            t_max: hi,
            x_half_width: w,
        } => {
            if let Some(v) = t_min {
                *lo = v;
            }
            if let Some(v) = t_max {
                *hi = v;
            }
            if let Some(v) = x_half_width {
                *w = v;
            }
        }
        SearchBox::Ball { rho_max: r } => {
            if let Some(v) = rho_max {
                *r = v;
            }
        }
    }
    let dec = engine::poafd_run(&family.inner, &signal.inner, iterations, &config).map_err(err)?;
    Ok(PyDecomposition { inner: dec })
}

/// Reproducing kernel value K(q, p).
#[pyfunction]
fn kernel(family: &PyFamily, q: &PyParam, p: &PyParam) -> PyResult<f64> {
    kernels::eval_k(&family.inner, &q.inner, &p.inner).map_err(err)
}

/// Norm ‖K_q‖ of the kernel at q.
#[pyfunction]
fn kernel_norm(family: &PyFamily, q: &PyParam) -> PyResult<f64> {
    kernels::kernel_norm(&family.inner, &q.inner).map_err(err)
}

/// Boundary trace of the kernel at q evaluated in y.
#[pyfunction]
fn boundary_kernel(family: &PyFamily, q: &PyParam, y: Vec<f64>) -> PyResult<f64> {
    kernels::eval_h(&family.inner, &q.inner, &y).map_err(err)
}

/// Run verification suites; returns one dict per check.
#[pyfunction]
#[pyo3(signature = (scope = None, seed = 7))]
fn verify(py: Python<'_>, scope: Option<Vec<String>>, seed: u64) -> PyResult<Vec<Py<PyDict>>> {
    let scopes = match scope {
        None => VerifyScope::all(),
        Some(names) => names
            .iter()
            .map(|s| VerifyScope::parse(s))
            .collect::<poafd::Result<Vec<_>>>()
            .map_err(err)?,
    };
    let rows = run::run_verify(&scopes, seed).map_err(err)?;
    rows.into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("suite", r.suite)?;
            d.set_item("name", r.name)?;
            d.set_item("value", r.value)?;
            d.set_item("reference", r.reference)?;
            d.set_item("residual", r.residual)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("pass", r.pass)?;
            Ok(d.unbind())
        })
        .collect()
}

#[pymodule]
fn poafd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFamily>()?;
    m.add_class::<PyParam>()?;
    m.add_class::<PyAtom>()?;
    m.add_class::<PySignal>()?;
    m.add_class::<PyDecomposition>()?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(kernel, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_norm, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("__version__", run::library_version())?;
    Ok(())
}
