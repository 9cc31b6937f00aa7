//! Python bindings. Results that are records on the Rust side come back as
//! plain dicts and lists with the same field names as the JSON report.

use std::path::PathBuf;

use ::bandtop as core;
use core::analysis::{check_global, slice_profile as rs_slice_profile, GlobalContext, SliceOptions};
use core::degeneracy::{find_degeneracies as rs_find, refine_from, RefineOptions, ScanOptions};
use core::localmodel::{classify_point, LocalOptions};
use core::models::{self, HamiltonianFamily, Spin};
use core::report::{AnalysisReport, Parameters};
use core::topology::{self, LoopPath, Orientation, TopologyOptions};
use core::ErrorKind;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyComplex, PyModule};
use serde::Serialize;

create_exception!(
    bandtop,
    ModelError,
    PyValueError,
    "The model or its arguments are invalid."
);
create_exception!(
    bandtop,
    NumericalError,
    PyRuntimeError,
    "A numerical procedure did not converge."
);

fn err(e: core::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Model => ModelError::new_err(e.to_string()),
        ErrorKind::Numerical => NumericalError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A smooth family of Hermitian matrices over a torus or a chart.
#[pyclass(name = "Family", module = "bandtop", frozen)]
struct Family {
    inner: HamiltonianFamily,
}

#[pymethods]
impl Family {
    #[staticmethod]
    fn gyroid() -> Self {
        Family {
            inner: models::make_gyroid(),
        }
    }

    #[staticmethod]
    fn honeycomb() -> PyResult<Self> {
        Ok(Family {
            inner: models::make_digraph(2).map_err(err)?.renamed("honeycomb"),
        })
    }

    #[staticmethod]
    fn diamond() -> PyResult<Self> {
        Ok(Family {
            inner: models::make_digraph(3).map_err(err)?.renamed("diamond"),
        })
    }

    #[staticmethod]
    fn petal(n: usize) -> PyResult<Self> {
        Ok(Family {
            inner: models::make_petal(n).map_err(err)?,
        })
    }

    #[staticmethod]
    fn digraph(n: usize) -> PyResult<Self> {
        Ok(Family {
            inner: models::make_digraph(n).map_err(err)?,
        })
    }

    /// Linear family `k·S` for spin `s` (0.5, 1, 1.5, ...).
    #[staticmethod]
    fn spin(s: f64) -> PyResult<Self> {
        Ok(Family {
            inner: models::make_spin_family(Spin::new(s).map_err(err)?),
        })
    }

    /// Parses a model in the JSON model-file format.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Family {
            inner: models::parse_model_json(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Family {
            inner: models::load_model_file(&path).map_err(err)?,
        })
    }

    /// The real spanning-tree perturbation of the Gyroid.
    #[staticmethod]
    fn gyroid_tree_perturbation(delta: [f64; 3]) -> Self {
        Family {
            inner: models::gyroid_tree_perturbation(delta),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn bands(&self) -> usize {
        self.inner.bands()
    }

    #[getter]
    fn time_reversal(&self) -> bool {
        self.inner.has_time_reversal()
    }

    fn matrix(&self, k: Vec<f64>) -> PyResult<Vec<Vec<Complex>>> {
        self.check_point(&k)?;
        let h = self.inner.at(&k);
        let m = h.matrix();
        let n = m.dim();
        Ok((0..n).map(|i| (0..n).map(|j| Complex(m[(i, j)])).collect()).collect())
    }

    fn eigenvalues(&self, k: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_point(&k)?;
        Ok(self.inner.spectrum(&k).map_err(err)?.values)
    }

    fn gap(&self, k: Vec<f64>) -> PyResult<f64> {
        self.check_point(&k)?;
        Ok(self.inner.gap(&k))
    }

    /// `H + λ H₁`.
    fn deform(&self, perturbation: &Family, lam: f64) -> PyResult<Family> {
        Ok(Family {
            inner: models::deform(&self.inner, &perturbation.inner, lam).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Family(name={:?}, dim={}, bands={})",
            self.inner.name(),
            self.inner.dim(),
            self.inner.bands()
        )
    }
}

impl Family {
    fn check_point(&self, k: &[f64]) -> PyResult<()> {
        if k.len() != self.inner.dim() {
            return Err(ModelError::new_err(format!(
                "expected {} coordinates, got {}",
                self.inner.dim(),
                k.len()
            )));
        }
        Ok(())
    }
}

/// Converts to a Python `complex`.
struct Complex(core::linalg::C64);

impl<'py> IntoPyObject<'py> for Complex {
    type Target = PyComplex;
    type Output = Bound<'py, PyComplex>;
    type Error = std::convert::Infallible;

    fn into_pyobject(self, py: Python<'py>) -> Result<Self::Output, Self::Error> {
        Ok(PyComplex::from_doubles(py, self.0.re, self.0.im))
    }
}

fn scan_options(grid: usize) -> ScanOptions {
    ScanOptions {
        grid,
        ..Default::default()
    }
}

/// Scan, refine and classify loci; returns `{points, curves, near}`.
#[pyfunction]
#[pyo3(signature = (family, grid = 48))]
fn find_degeneracies(py: Python<'_>, family: &Family, grid: usize) -> PyResult<Py<PyAny>> {
    let f = family.inner.clone();
    let report = py
        .detach(move || rs_find(&f, &scan_options(grid), &RefineOptions::default()))
        .map_err(err)?;
    to_py(py, &report)
}

/// Refines a degeneracy from `start` and returns its local model.
#[pyfunction]
#[pyo3(signature = (family, start, radius = 0.3, seed = 7))]
fn classify(py: Python<'_>, family: &Family, start: Vec<f64>, radius: f64, seed: u64) -> PyResult<Py<PyAny>> {
    family.check_point(&start)?;
    let f = family.inner.clone();
    let model = py
        .detach(move || {
            let opts = RefineOptions::default();
            let mut p = refine_from(&f, &start, 0.05, &opts)?;
            p.locus = core::degeneracy::locus_dimension_probe(&f, &p.location, p.residual_gap, opts.probe_radius).0;
            let local = LocalOptions {
                radius,
                seed,
                ..Default::default()
            };
            classify_point(&f, &p, &[], &local)
        })
        .map_err(err)?;
    let summary = core::report::Classification::of(&model);
    to_py(py, &serde_json::json!({"classification": summary, "model": model}))
}

/// χ_i over slices normal to `axis` with jumps and critical values.
#[pyfunction]
#[pyo3(signature = (family, axis, grid = 48))]
fn slice_profile(py: Python<'_>, family: &Family, axis: usize, grid: usize) -> PyResult<Py<PyAny>> {
    let f = family.inner.clone();
    let profile = py
        .detach(move || {
            let report = rs_find(&f, &scan_options(grid), &RefineOptions::default())?;
            rs_slice_profile(&f, axis, &report, &SliceOptions::default())
        })
        .map_err(err)?;
    to_py(py, &profile)
}

/// Chern numbers of all bands on the slice `k[axis] = t`.
#[pyfunction]
#[pyo3(signature = (family, axis, t, grid = 32))]
fn chern_on_slice(py: Python<'_>, family: &Family, axis: usize, t: f64, grid: usize) -> PyResult<Vec<i64>> {
    let f = family.inner.clone();
    let opts = TopologyOptions {
        grid,
        ..Default::default()
    };
    let rs = py
        .detach(move || topology::chern_on_slice(&f, axis, t, &opts))
        .map_err(err)?;
    Ok(rs.iter().map(|c| c.value).collect())
}

/// Chern numbers of all bands on the cube surface of half-width `r`.
#[pyfunction]
#[pyo3(signature = (family, center, r, inward = false, grid = 32))]
fn chern_on_sphere(
    py: Python<'_>,
    family: &Family,
    center: Vec<f64>,
    r: f64,
    inward: bool,
    grid: usize,
) -> PyResult<Vec<i64>> {
    let f = family.inner.clone();
    let opts = TopologyOptions {
        grid,
        ..Default::default()
    };
    let orientation = if inward {
        Orientation::Inward
    } else {
        Orientation::Outward
    };
    let rs = py
        .detach(move || topology::chern_on_sphere(&f, &center, r, orientation, &opts))
        .map_err(err)?;
    Ok(rs.iter().map(|c| c.value).collect())
}

/// Berry phase of `band` around a circle in the coordinate plane `plane`.
#[pyfunction]
#[pyo3(signature = (family, center, r, band = 0, plane = (0, 1)))]
fn berry_phase(
    py: Python<'_>,
    family: &Family,
    center: Vec<f64>,
    r: f64,
    band: usize,
    plane: (usize, usize),
) -> PyResult<f64> {
    family.check_point(&center)?;
    let f = family.inner.clone();
    let path = LoopPath::axis_circle(center, r, plane.0, plane.1, 16);
    let res = py
        .detach(move || topology::berry_phase(&f, &path, band, &TopologyOptions::default()))
        .map_err(err)?;
    Ok(res.phase)
}

/// The full pipeline; returns the analysis report as a dict.
#[pyfunction]
#[pyo3(signature = (family, grid = 48, sphere_r = 0.3, seed = 7))]
fn analyze(py: Python<'_>, family: &Family, grid: usize, sphere_r: f64, seed: u64) -> PyResult<Py<PyAny>> {
    let f = family.inner.clone();
    let params = Parameters {
        grid,
        sphere_r,
        seed,
        ..Default::default()
    };
    let report = py.detach(move || AnalysisReport::run(&f, params)).map_err(err)?;
    to_py(py, &report)
}

/// Re-audits the constraints of a report given as JSON text.
#[pyfunction]
fn check_report(py: Python<'_>, report_json: &str) -> PyResult<Py<PyAny>> {
    let report = AnalysisReport::from_json(report_json).map_err(err)?;
    let ctx: GlobalContext = report.context();
    to_py(py, &check_global(&ctx))
}

#[pymodule]
#[pyo3(name = "bandtop")]
fn bandtop_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ModelError", m.py().get_type::<ModelError>())?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<Family>()?;
    m.add_function(wrap_pyfunction!(find_degeneracies, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(slice_profile, m)?)?;
    m.add_function(wrap_pyfunction!(chern_on_slice, m)?)?;
    m.add_function(wrap_pyfunction!(chern_on_sphere, m)?)?;
    m.add_function(wrap_pyfunction!(berry_phase, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(check_report, m)?)?;
    Ok(())
}
