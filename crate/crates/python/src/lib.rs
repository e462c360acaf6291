//! Python bindings: geometries on the torus or a toric polytope, their moment
//! map diagnostics, the Calabi flow and scenario verification.

use std::sync::Arc;

use cgkahler::field_core::{Chart, Field, GridField, JetField, Polytope};
use cgkahler::flow::{run_flow, FlowConfig, Preconditioner};
use cgkahler::geometry::{build_toric_geometry, build_torus_geometry, GeometryState};
use cgkahler::moment_map::{
    calabi_functional, futaki, mean_and_stddev, mu_levi_civita, three_way_agreement,
};
use cgkahler::operators::{lichnerowicz, poisson_relation};
use cgkahler::Expr;
use cgkahler_cli::{verify_all, ScenarioConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse(s: &str) -> PyResult<Expr> {
    Expr::parse(s).map_err(value_error)
}

/// Converts any serializable value into plain Python objects.
fn to_python<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

enum Inner {
    Torus(GeometryState<GridField>),
    Toric(GeometryState<JetField>),
}

macro_rules! dispatch {
    ($inner:expr, $g:ident => $body:expr) => {
        match $inner {
            Inner::Torus($g) => $body,
            Inner::Toric($g) => $body,
        }
    };
}

fn mu_stats<F: Field>(g: &GeometryState<F>) -> PyResult<(f64, f64, f64)> {
    let mu = mu_levi_civita(g).map_err(runtime_error)?;
    let (mean, stddev) = mean_and_stddev(g, &mu).map_err(runtime_error)?;
    Ok((mean, stddev, mu.max_abs()))
}

fn futaki_of<F: Field>(g: &GeometryState<F>, f: &str) -> PyResult<f64> {
    let f = F::from_expr(g.chart(), &parse(f)?).map_err(value_error)?;
    futaki(g, &f).map_err(runtime_error)
}

fn three_way_of<F: Field>(g: &GeometryState<F>, f: &str) -> PyResult<f64> {
    let f = F::from_expr(g.chart(), &parse(f)?).map_err(value_error)?;
    Ok(three_way_agreement(g, &f)
        .map_err(runtime_error)?
        .max_disagreement())
}

fn poisson_of<F: Field>(g: &GeometryState<F>, f: &str) -> PyResult<f64> {
    let f = F::from_expr(g.chart(), &parse(f)?).map_err(value_error)?;
    let op = lichnerowicz(g).map_err(runtime_error)?;
    let r = poisson_relation(g, &op, &f).map_err(runtime_error)?;
    Ok(r.difference / r.lhs_norm.max(r.rhs_norm).max(r.scale))
}

/// A Kähler geometry on the flat torus or on a Delzant polytope.
#[pyclass(frozen)]
struct Geometry {
    inner: Inner,
}

#[pymethods]
impl Geometry {
    /// Torus geometry with Kähler potential `potential` (functions of x1, x2).
    #[staticmethod]
    #[pyo3(signature = (potential, resolution = 32, dim = 1))]
    fn torus(potential: &str, resolution: usize, dim: usize) -> PyResult<Self> {
        let chart = Chart::torus(dim, resolution).map_err(value_error)?;
        let g = build_torus_geometry(&parse(potential)?, dim, &chart).map_err(runtime_error)?;
        Ok(Self {
            inner: Inner::Torus(g),
        })
    }

    /// Toric geometry on {x : <normals[k], x> + offsets[k] >= 0} with
    /// symplectic potential `potential`.
    #[staticmethod]
    #[pyo3(signature = (normals, offsets, potential, resolution = 16, jet_order = 8))]
    fn toric(
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        potential: &str,
        resolution: usize,
        jet_order: usize,
    ) -> PyResult<Self> {
        let poly = Polytope::new(normals, offsets).map_err(value_error)?;
        let chart = Chart::on_polytope(poly.clone(), resolution, jet_order).map_err(value_error)?;
        let g = build_toric_geometry(&poly, &parse(potential)?, &chart).map_err(runtime_error)?;
        Ok(Self {
            inner: Inner::Toric(g),
        })
    }

    #[getter]
    fn backend(&self) -> &'static str {
        match self.inner {
            Inner::Torus(_) => "torus",
            Inner::Toric(_) => "toric",
        }
    }

    /// Real dimension.
    #[getter]
    fn dim(&self) -> usize {
        dispatch!(&self.inner, g => g.dim())
    }

    fn volume(&self) -> PyResult<f64> {
        dispatch!(&self.inner, g => g.volume().map_err(runtime_error))
    }

    /// `(mean, stddev, max_abs)` of the moment map.
    fn mu(&self) -> PyResult<(f64, f64, f64)> {
        dispatch!(&self.inner, g => mu_stats(g))
    }

    /// The Calabi functional, the integral of |mu|^2.
    fn calabi(&self) -> PyResult<f64> {
        dispatch!(&self.inner, g => calabi_functional(g).map_err(runtime_error))
    }

    fn futaki(&self, f: &str) -> PyResult<f64> {
        dispatch!(&self.inner, g => futaki_of(g, f))
    }

    /// Largest pairwise disagreement of the three Lie-derivative formulas.
    fn three_way(&self, f: &str) -> PyResult<f64> {
        dispatch!(&self.inner, g => three_way_of(g, f))
    }

    /// Relative residual of the Poisson relation for the Hamiltonian `f`.
    fn poisson(&self, f: &str) -> PyResult<f64> {
        dispatch!(&self.inner, g => poisson_of(g, f))
    }
}

/// Runs a scenario file or bundled scenario name; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, seed = None))]
fn verify<'py>(py: Python<'py>, scenario: &str, seed: Option<u64>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = ScenarioConfig::load(scenario).map_err(value_error)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let report = py.detach(|| verify_all(&cfg));
    to_python(py, &report)
}

/// Calabi flow on the torus; returns `(summary, trace)`.
#[pyfunction]
#[pyo3(signature = (potential, resolution = 64, steps = 200, preconditioned = false))]
fn flow<'py>(
    py: Python<'py>,
    potential: &str,
    resolution: usize,
    steps: usize,
    preconditioned: bool,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let initial = parse(potential)?;
    let chart: Arc<Chart> = Chart::torus(1, resolution).map_err(value_error)?;
    let cfg = FlowConfig {
        max_steps: steps,
        preconditioner: if preconditioned {
            Preconditioner::FlatInverse
        } else {
            Preconditioner::None
        },
        ..Default::default()
    };
    let state = py
        .detach(|| run_flow(&initial, &chart, &cfg, |_| {}))
        .map_err(runtime_error)?;
    Ok((
        to_python(py, &state.summary())?,
        to_python(py, &state.trace)?,
    ))
}

#[pymodule]
fn cgkahler_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Geometry>()?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    Ok(())
}
