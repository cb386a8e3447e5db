//! Python bindings. Vectors and matrices cross the boundary as (nested) lists.

use nalgebra::{DMatrix, DVector};
use parareach_core as core;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(parareach, ParareachError, PyException);

fn err(e: core::Error) -> PyErr {
    ParareachError::new_err(format!("{}: {e}", e.kind()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ParareachError::new_err("dimension_mismatch: ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Linear plant with an integral quadratic constraint on `[x; u; w]`.
#[pyclass(name = "System", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySystem(core::IqcSystem);

#[pymethods]
impl PySystem {
    /// `u_times`/`u_values` give a sampled known input; omit both for `u = 0`.
    #[new]
    #[pyo3(signature = (a, b, m, bu=None, u_times=None, u_values=None))]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        m: Vec<Vec<f64>>,
        bu: Option<Vec<Vec<f64>>>,
        u_times: Option<Vec<f64>>,
        u_values: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let a = matrix(a)?;
        let n = a.nrows();
        let bu = match bu {
            Some(r) => matrix(r)?,
            None => DMatrix::zeros(n, 0),
        };
        let input = match (u_times, u_values) {
            (None, None) => core::InputSignal::Zero(bu.ncols()),
            (Some(t), Some(v)) => core::InputSignal::Sampled(
                core::SampledSignal::new(t, v.into_iter().map(vector).collect()).map_err(err)?,
            ),
            _ => return Err(ParareachError::new_err("invalid_config: give both u_times and u_values")),
        };
        core::IqcSystem::new(a, matrix(b)?, bu, matrix(m)?, input)
            .map(Self)
            .map_err(err)
    }

    /// Reads a JSON system file; returns `(system, seed or None, horizon or None)`.
    #[staticmethod]
    fn from_json(path: &str) -> PyResult<(Self, Option<PyParaboloid>, Option<f64>)> {
        let f = core::SystemFile::read(std::path::Path::new(path)).map_err(err)?;
        let sys = f.system().map_err(err)?;
        let seed = f.seed().map_err(err)?.map(PyParaboloid);
        Ok((Self(sys), seed, f.horizon))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn p(&self) -> usize {
        self.0.p()
    }

    #[getter(M)]
    fn m_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.0.m_matrix())
    }

    fn energy_rate(&self, x: Vec<f64>, u: Vec<f64>, w: Vec<f64>) -> f64 {
        self.0.energy_rate(&vector(x), &vector(u), &vector(w))
    }

    fn __repr__(&self) -> String {
        format!("System(n={}, m={}, p={})", self.0.n(), self.0.m(), self.0.p())
    }
}

/// `{(x, x_q) : xᵀEx − 2fᵀx + g + x_q ≤ 0}`.
#[pyclass(name = "Paraboloid", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyParaboloid(core::Paraboloid);

#[pymethods]
impl PyParaboloid {
    #[new]
    fn new(e: Vec<Vec<f64>>, f: Vec<f64>, g: f64) -> PyResult<Self> {
        core::Paraboloid::new(matrix(e)?, vector(f), g)
            .map(Self)
            .map_err(err)
    }

    #[getter(E)]
    fn e(&self) -> Vec<Vec<f64>> {
        rows(self.0.e())
    }

    #[getter]
    fn f(&self) -> Vec<f64> {
        list(self.0.f())
    }

    #[getter]
    fn g(&self) -> f64 {
        self.0.g()
    }

    fn value_function(&self, x: Vec<f64>, xq: f64) -> PyResult<f64> {
        let s = core::AugmentedState::new(vector(x), xq).map_err(err)?;
        self.0.value_function(&s).map_err(err)
    }

    fn contains(&self, x: Vec<f64>, xq: f64) -> PyResult<bool> {
        let s = core::AugmentedState::new(vector(x), xq).map_err(err)?;
        self.0.contains(&s).map_err(err)
    }

    /// Largest `x_q` in the paraboloid above `x`.
    fn xq_bound(&self, x: Vec<f64>) -> f64 {
        self.0.xq_bound(&vector(x))
    }

    fn scale(&self, gamma: f64) -> PyResult<Self> {
        self.0.scale(gamma).map(Self).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Paraboloid(E={:?}, f={:?}, g={})", rows(self.0.e()), list(self.0.f()), self.0.g())
    }
}

#[pyclass(name = "TimeVaryingParaboloid", frozen)]
struct PyTvp(core::TimeVaryingParaboloid);

#[pymethods]
impl PyTvp {
    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times()
    }

    #[getter]
    fn escape_time(&self) -> Option<f64> {
        self.0.escape_time()
    }

    /// Last time at which the paraboloid is defined.
    #[getter]
    fn end(&self) -> f64 {
        self.0.end()
    }

    fn eval(&self, t: f64) -> PyResult<PyParaboloid> {
        self.0.eval(t).map(PyParaboloid).map_err(err)
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.0.write_csv(file).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Family", frozen)]
struct PyFamily(core::ParaboloidFamily);

#[pymethods]
impl PyFamily {
    #[getter]
    fn gammas(&self) -> Vec<f64> {
        self.0.gammas().to_vec()
    }

    #[getter]
    fn gamma_bar(&self) -> f64 {
        self.0.gamma_bar()
    }

    #[getter]
    fn eps_q(&self) -> f64 {
        self.0.eps_q()
    }

    #[getter]
    fn k_bound(&self) -> f64 {
        self.0.k_bound()
    }

    /// `(xq_max, gamma of the active member)` at `(t, x)`.
    fn xq_max(&self, t: f64, x: Vec<f64>) -> PyResult<(f64, f64)> {
        let snap = self.0.snapshot(t).map_err(err)?;
        let (v, k) = snap.xq_max(&vector(x));
        Ok((v, self.0.gammas()[k]))
    }

    /// `(inside, margin)` for the intersection of the defined members.
    fn membership(&self, t: f64, x: Vec<f64>, xq: f64) -> PyResult<(bool, f64)> {
        let s = core::AugmentedState::new(vector(x), xq).map_err(err)?;
        let m = self.0.intersection_membership(t, &s).map_err(err)?;
        Ok((m.inside, m.margin))
    }

    /// `(xq_max list, active gamma list)` over the given points.
    fn slice(&self, t: f64, points: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let s = self
            .0
            .reach_slice(t, points.into_iter().map(vector).collect())
            .map_err(err)?;
        let g = s.argmin.iter().map(|&k| s.gammas[k]).collect();
        Ok((s.xq_max, g))
    }

    /// Bounding box `(lower, upper, bounded)` of the slice at `t`.
    fn slice_bounds(&self, t: f64) -> PyResult<(Vec<f64>, Vec<f64>, bool)> {
        let b = self.0.slice_bounds(t, 64).map_err(err)?;
        Ok((list(&b.lower), list(&b.upper), b.bounded))
    }

    /// Runs both assumption checks; returns the family manifest as JSON text.
    fn check_assumptions(&self, system: &PySystem) -> PyResult<String> {
        let rep = core::check_assumptions(&self.0, &system.0, &core::AssumptionConfig::default())
            .map_err(err)?;
        self.0.manifest_json(Some(&rep)).map_err(err)
    }

    fn member(&self, k: usize) -> PyResult<PyTvp> {
        self.0
            .members()
            .get(k)
            .cloned()
            .map(PyTvp)
            .ok_or_else(|| ParareachError::new_err("invalid_config: member index out of range"))
    }

    fn __len__(&self) -> usize {
        self.0.members().len()
    }
}

#[pyfunction]
#[pyo3(signature = (seed, system, horizon=1.0, gamma=1.0, rel_tol=1e-9, abs_tol=1e-12))]
fn propagate(
    seed: &PyParaboloid,
    system: &PySystem,
    horizon: f64,
    gamma: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> PyResult<PyTvp> {
    let cfg = core::IntegratorConfig {
        rel_tol,
        abs_tol,
        ..core::IntegratorConfig::default().with_t_end(horizon)
    };
    core::propagate_scaled(&seed.0, gamma, &system.0, &cfg)
        .map(PyTvp)
        .map_err(err)
}

/// `gammas` (explicit list) takes precedence over `members` (uniform count).
#[pyfunction]
#[pyo3(signature = (seed, system, horizon=1.0, gammas=None, members=16, eps_q=None))]
fn build_family(
    seed: &PyParaboloid,
    system: &PySystem,
    horizon: f64,
    gammas: Option<Vec<f64>>,
    members: usize,
    eps_q: Option<f64>,
) -> PyResult<PyFamily> {
    let cfg = core::FamilyConfig {
        gammas: match gammas {
            Some(g) => core::GammaSpec::Explicit(g),
            None => core::GammaSpec::Uniform(members),
        },
        eps_q,
        integrator: core::IntegratorConfig::default().with_t_end(horizon),
        ..core::FamilyConfig::default()
    };
    core::build_family(&seed.0, &system.0, &cfg)
        .map(PyFamily)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (paraboloid, x, system, u=None))]
fn optimal_disturbance(
    paraboloid: &PyParaboloid,
    x: Vec<f64>,
    system: &PySystem,
    u: Option<Vec<f64>>,
) -> PyResult<Vec<f64>> {
    let u = u.map(vector).unwrap_or_else(|| DVector::zeros(system.0.p()));
    core::optimal_disturbance(&paraboloid.0, &vector(x), &u, &system.0)
        .map(|w| list(&w))
        .map_err(err)
}

/// Touching trajectory from `(x0, xq0)` on the seed boundary; returns
/// `(times, x, xq, h)`.
#[pyfunction]
fn touching_trajectory(
    tvp: &PyTvp,
    x0: Vec<f64>,
    xq0: f64,
    system: &PySystem,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let s = core::AugmentedState::new(vector(x0), xq0).map_err(err)?;
    let tr = core::touching_trajectory(&tvp.0, &s, &system.0, &core::TouchConfig::default())
        .map_err(err)?;
    Ok((tr.times, tr.x.iter().map(list).collect(), tr.xq, tr.h))
}

/// Samples admissible trajectories and checks them against the family at
/// `times`; returns `(checked, violations, max_margin, endpoints at the last time)`.
#[pyfunction]
#[pyo3(signature = (family, system, seed, times, n=1000, rng_seed=0, margin=1e-8))]
fn verify(
    family: &PyFamily,
    system: &PySystem,
    seed: &PyParaboloid,
    times: Vec<f64>,
    n: usize,
    rng_seed: u64,
    margin: f64,
) -> PyResult<(usize, usize, f64, Vec<Vec<f64>>)> {
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let cfg = core::OracleConfig {
        n_trajectories: n,
        seed: rng_seed,
        t_end,
        sample_times: times.clone(),
        ..core::OracleConfig::default()
    };
    let run = core::sample_admissible(&system.0, &seed.0, Some(&family.0), &cfg).map_err(err)?;
    let rep = core::soundness(&family.0, &run, &times, margin).map_err(err)?;
    let ends = run
        .endpoints()
        .iter()
        .map(|s| {
            let mut v = list(&s.x);
            v.push(s.xq);
            v
        })
        .collect();
    Ok((rep.checked, rep.violations.len(), rep.max_margin, ends))
}

/// `(system, seed, horizon)` of a built-in example.
#[pyfunction]
fn preset(name: &str) -> PyResult<(PySystem, PyParaboloid, f64)> {
    let p = core::presets::preset(name).map_err(err)?;
    Ok((PySystem(p.system), PyParaboloid(p.seed), p.horizon))
}

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    core::presets::PRESET_NAMES.to_vec()
}

#[pymodule]
fn parareach(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ParareachError", m.py().get_type::<ParareachError>())?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyParaboloid>()?;
    m.add_class::<PyTvp>()?;
    m.add_class::<PyFamily>()?;
    m.add_function(wrap_pyfunction!(propagate, m)?)?;
    m.add_function(wrap_pyfunction!(build_family, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_disturbance, m)?)?;
    m.add_function(wrap_pyfunction!(touching_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
