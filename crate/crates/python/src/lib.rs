//! Python bindings. Matrices cross the boundary as nested lists (rows of
//! floats, or rows of complex numbers for complex chains); chains are lists
//! of layers with `W_N` first. Reports come back as plain dicts.

use std::any::Any;

use dln::battery::{run_battery as battery, BatteryConfig};
use dln::flows::{self, FlowResult, IntegratorSpec, LossSpec, Scheme, StochasticRun, StochasticSpec};
use dln::io::{balancing_to_json, minimization_to_json, AnyChain};
use dln::linalg::Mat;
use dln::realization::{self, BalanceOptions, StateSpace};
use dln::variational::{self, MinimizeOptions};
use dln::{Chain, Complex64, Field, GroupElement, Scalar, TangentCoords};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::IntoPyObjectExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Rows = Vec<Vec<Complex64>>;

fn err(e: dln::Error) -> PyErr {
    use dln::Error as E;
    match e {
        E::NonSquare { .. }
        | E::DimensionMismatch(_)
        | E::RankDeficient { .. }
        | E::NotUnitary { .. }
        | E::InvalidExponent(_)
        | E::InvalidParameter { .. }
        | E::LossGradientCheck { .. }
        | E::Parse(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_field(s: &str) -> PyResult<Field> {
    s.parse().map_err(err)
}

fn to_mat<T: Scalar>(rows: &Rows) -> PyResult<Mat<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    if T::FIELD == Field::Real && rows.iter().flatten().any(|z| z.im != 0.0) {
        return Err(PyValueError::new_err("complex entry in a real matrix; pass field=\"complex\""));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| T::from_parts(rows[i][j].re, rows[i][j].im)))
}

fn from_mat<T: Scalar>(py: Python<'_>, m: &Mat<T>) -> PyResult<Py<PyAny>> {
    let entry = |x: T| {
        let mut p = Vec::with_capacity(2);
        x.push_reals(&mut p);
        Complex64::new(p[0], p.get(1).copied().unwrap_or(0.0))
    };
    let rows = (0..m.nrows()).map(|i| (0..m.ncols()).map(move |j| entry(m[(i, j)])));
    match T::FIELD {
        Field::Real => rows.map(|r| r.map(|z| z.re).collect::<Vec<_>>()).collect::<Vec<_>>().into_py_any(py),
        Field::Complex => rows.map(|r| r.collect::<Vec<_>>()).collect::<Vec<_>>().into_py_any(py),
    }
}

fn from_mats<T: Scalar>(py: Python<'_>, ms: &[Mat<T>]) -> PyResult<Py<PyAny>> {
    ms.iter().map(|m| from_mat(py, m)).collect::<PyResult<Vec<_>>>()?.into_py_any(py)
}

fn to_mats<T: Scalar>(ms: &[Rows]) -> PyResult<Vec<Mat<T>>> {
    ms.iter().map(to_mat).collect()
}

fn to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (v.to_string(),))?.unbind())
}

/// A deep linear network `(W_N, ..., W_1)` over the reals or complexes.
#[pyclass(name = "Chain", module = "dln", frozen, from_py_object)]
#[derive(Clone)]
struct PyChain(AnyChain);

macro_rules! dispatch {
    ($chain:expr, $w:ident => $body:expr) => {
        match &$chain {
            AnyChain::Real($w) => $body,
            AnyChain::Complex($w) => $body,
        }
    };
}

fn wrap<T: Scalar>(w: Chain<T>) -> PyChain {
    let any: Box<dyn Any> = Box::new(w);
    PyChain(match any.downcast::<Chain<f64>>() {
        Ok(w) => AnyChain::Real(*w),
        Err(any) => AnyChain::Complex(*any.downcast::<Chain<Complex64>>().expect("scalar is f64 or Complex64")),
    })
}

fn build<T: Scalar>(matrices: &[Rows]) -> PyResult<Chain<T>> {
    Chain::new(to_mats(matrices)?).map_err(err)
}

impl PyChain {
    fn from_field(field: Field, matrices: &[Rows]) -> PyResult<Self> {
        Ok(PyChain(match field {
            Field::Real => AnyChain::Real(build(matrices)?),
            Field::Complex => AnyChain::Complex(build(matrices)?),
        }))
    }
}

#[pymethods]
impl PyChain {
    /// Build a chain from its layers, `W_N` first.
    #[new]
    #[pyo3(signature = (matrices, field = "real"))]
    fn new(matrices: Vec<Rows>, field: &str) -> PyResult<Self> {
        PyChain::from_field(parse_field(field)?, &matrices)
    }

    /// I.i.d. standard Gaussian layers drawn from `seed`.
    #[staticmethod]
    #[pyo3(signature = (depth, d, seed = 0, field = "real"))]
    fn random(depth: usize, d: usize, seed: u64, field: &str) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(PyChain(match parse_field(field)? {
            Field::Real => AnyChain::Real(Chain::random(depth, d, &mut rng).map_err(err)?),
            Field::Complex => AnyChain::Complex(Chain::random(depth, d, &mut rng).map_err(err)?),
        }))
    }

    #[staticmethod]
    #[pyo3(signature = (depth, d, field = "real"))]
    fn identity(depth: usize, d: usize, field: &str) -> PyResult<Self> {
        Ok(PyChain(match parse_field(field)? {
            Field::Real => AnyChain::Real(Chain::identity(depth, d).map_err(err)?),
            Field::Complex => AnyChain::Complex(Chain::identity(depth, d).map_err(err)?),
        }))
    }

    /// The balanced chain `Q_N S^{1/N} Q_{N-1}*, ...` built from the SVD of `x`.
    #[staticmethod]
    #[pyo3(signature = (x, depth, field = "real"))]
    fn center(x: Rows, depth: usize, field: &str) -> PyResult<Self> {
        Ok(match parse_field(field)? {
            Field::Real => wrap(dln::center(&to_mat::<f64>(&x)?, depth).map_err(err)?),
            Field::Complex => wrap(dln::center(&to_mat::<Complex64>(&x)?, depth).map_err(err)?),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        AnyChain::from_json(&v).map(PyChain).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json().to_string()
    }

    #[getter]
    fn depth(&self) -> usize {
        dispatch!(self.0, w => w.depth())
    }

    #[getter]
    fn width(&self) -> usize {
        dispatch!(self.0, w => w.width())
    }

    #[getter]
    fn field(&self) -> String {
        self.0.field().to_string()
    }

    /// Layers, `W_N` first.
    fn matrices(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        dispatch!(self.0, w => from_mats(py, w.layers()))
    }

    /// `W_k` for `k = 1..=N`.
    fn layer(&self, py: Python<'_>, k: usize) -> PyResult<Py<PyAny>> {
        dispatch!(self.0, w => {
            if k == 0 || k > w.depth() {
                return Err(PyValueError::new_err(format!("layer index must lie in 1..={}", w.depth())));
            }
            from_mat(py, w.layer(k))
        })
    }

    fn end_to_end(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        dispatch!(self.0, w => from_mat(py, &dln::end_to_end(w)))
    }

    /// `[G_{N-1}, ..., G_1]` with `G_k = W_k W_k* - W_{k+1}* W_{k+1}`.
    fn moments(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        dispatch!(self.0, w => from_mats(py, dln::moments(w).as_slice()))
    }

    fn ridge_norm_sq(&self) -> f64 {
        dispatch!(self.0, w => dln::ridge_norm_sq(w))
    }

    fn schatten_norm(&self, p: f64) -> PyResult<f64> {
        dispatch!(self.0, w => dln::schatten_norm(w, p).map_err(err))
    }

    fn balancedness_residual(&self) -> f64 {
        dispatch!(self.0, w => dln::balancedness_residual(w))
    }

    fn fiber_residual(&self, x: Rows) -> PyResult<f64> {
        dispatch!(self.0, w => dln::fiber_residual(w, &to_mat(&x)?).map_err(err))
    }

    /// Singular values per layer and the alignment defects between
    /// neighbouring layers.
    fn alignment(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let rep = dispatch!(self.0, w => dln::alignment_report(w).map_err(err)?);
        let d = PyDict::new(py);
        d.set_item("singular_values", rep.singular_values.clone())?;
        d.set_item("alignment_defect", rep.alignment_defect.clone())?;
        d.set_item("value_mismatch", rep.value_mismatch.clone())?;
        Ok(d.into_any().unbind())
    }

    /// Act by `(A_{N-1}, ..., A_1)`: `W_k -> A_k W_k A_{k-1}^{-1}`.
    fn act(&self, factors: Vec<Rows>) -> PyResult<Self> {
        dispatch!(self.0, w => {
            let g = GroupElement::new(to_mats(&factors)?);
            Ok(wrap(dln::gl_action(&g, w).map_err(err)?))
        })
    }

    /// Tangent vector `(v_N, ..., v_1)`, `v_k = a_k W_k - W_k a_{k-1}`,
    /// for coordinates `[a_{N-1}, ..., a_1]`.
    fn tangent(&self, py: Python<'_>, coords: Vec<Rows>) -> PyResult<Py<PyAny>> {
        dispatch!(self.0, w => {
            let v = dln::tangent_from_coords(w, &TangentCoords::new(to_mats(&coords)?)).map_err(err)?;
            from_mats(py, v.ambient().layers())
        })
    }

    /// Coordinates `[b_{N-1}, ..., b_1]` of the ridge gradient on the fiber.
    fn ridge_gradient_coords(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        dispatch!(self.0, w => from_mats(py, dln::ridge_gradient_coords(w).map_err(err)?.as_slice()))
    }

    fn __repr__(&self) -> String {
        format!("Chain(N={}, d={}, field={})", self.depth(), self.width(), self.field())
    }

    fn __eq__(&self, other: &PyChain) -> bool {
        self.0 == other.0
    }
}

fn integrator(dt: f64, t_end: f64, stride: usize, scheme: &str) -> PyResult<IntegratorSpec> {
    let scheme: Scheme = scheme.parse().map_err(err)?;
    Ok(IntegratorSpec {
        scheme,
        dt,
        t_end,
        sample_stride: stride,
    })
}

fn trace_dict<'py>(py: Python<'py>, trace: &flows::FlowTrace) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let col = |f: &dyn Fn(&flows::FlowSample) -> f64| trace.samples.iter().map(f).collect::<Vec<f64>>();
    d.set_item("t", col(&|s| s.t))?;
    d.set_item("G_fro", col(&|s| s.g_fro))?;
    d.set_item("G_k_fro", trace.samples.iter().map(|s| s.g_k_fro.clone()).collect::<Vec<_>>())?;
    d.set_item("W_normsq", col(&|s| s.w_normsq))?;
    d.set_item("loss", trace.samples.iter().map(|s| s.loss).collect::<Vec<_>>())?;
    d.set_item("fiber_drift", col(&|s| s.fiber_drift))?;
    d.set_item("balance_residual", col(&|s| s.balance_residual))?;
    d.set_item("moment_drift", trace.samples.iter().map(|s| s.moment_drift).collect::<Vec<_>>())?;
    if trace.samples.iter().any(|s| s.ness_speed_sq.is_some()) {
        d.set_item("ness_speed_sq", trace.samples.iter().map(|s| s.ness_speed_sq).collect::<Vec<_>>())?;
    }
    if let Some(fit) = trace.fit_g_decay() {
        let f = PyDict::new(py);
        f.set_item("slope", fit.slope)?;
        f.set_item("intercept", fit.intercept)?;
        f.set_item("r_squared", fit.r_squared)?;
        f.set_item("points", fit.points)?;
        d.set_item("decay_fit", f)?;
    }
    Ok(d)
}

fn flow_result<T: Scalar>(py: Python<'_>, r: FlowResult<T>) -> PyResult<Py<PyAny>> {
    let d = trace_dict(py, &r.trace)?;
    d.set_item("final_chain", wrap(r.final_chain))?;
    Ok(d.into_any().unbind())
}

fn stochastic_result<T: Scalar>(py: Python<'_>, r: StochasticRun<T>) -> PyResult<Py<PyAny>> {
    let d = trace_dict(py, &r.trace)?;
    d.set_item("final_chain", wrap(r.final_chain))?;
    d.set_item("seed", r.seed)?;
    d.set_item("stats", to_py(py, &serde_json::to_value(r.stats).expect("stats serialize"))?)?;
    Ok(d.into_any().unbind())
}

fn loss_for<T: Scalar>(target: Option<&Rows>) -> PyResult<LossSpec<T>> {
    match target {
        Some(y) => LossSpec::quadratic(to_mat(y)?).map_err(err),
        None => Ok(LossSpec::zero()),
    }
}

/// Gradient flow of the ridge norm restricted to the fiber; the moments
/// decay as `G(t) = exp(-4t) G(0)`.
#[pyfunction]
#[pyo3(signature = (chain, dt = 1e-3, t_end = 1.0, stride = 1, scheme = "rk4"))]
fn regularizing_flow(py: Python<'_>, chain: &PyChain, dt: f64, t_end: f64, stride: usize, scheme: &str) -> PyResult<Py<PyAny>> {
    let spec = integrator(dt, t_end, stride, scheme)?;
    dispatch!(chain.0, w => flow_result(py, flows::regularizing_flow(w, &spec).map_err(err)?))
}

/// Gradient flow of `||G||^2` on the fiber.
#[pyfunction]
#[pyo3(signature = (chain, dt = 1e-3, t_end = 1.0, stride = 1, scheme = "rk4"))]
fn ness_flow(py: Python<'_>, chain: &PyChain, dt: f64, t_end: f64, stride: usize, scheme: &str) -> PyResult<Py<PyAny>> {
    let spec = integrator(dt, t_end, stride, scheme)?;
    dispatch!(chain.0, w => flow_result(py, flows::ness_flow(w, &spec).map_err(err)?))
}

/// Ambient gradient flow of `E(X) = ||X - target||^2 / 2`.
#[pyfunction]
#[pyo3(signature = (chain, target, dt = 1e-3, t_end = 1.0, stride = 1, scheme = "rk4"))]
fn learning_flow(
    py: Python<'_>,
    chain: &PyChain,
    target: Rows,
    dt: f64,
    t_end: f64,
    stride: usize,
    scheme: &str,
) -> PyResult<Py<PyAny>> {
    let spec = integrator(dt, t_end, stride, scheme)?;
    dispatch!(chain.0, w => flow_result(py, flows::learning_flow(w, &loss_for(Some(&target))?, &spec).map_err(err)?))
}

/// Learning flow plus weight decay `kappa`; `target = None` drops the loss.
#[pyfunction]
#[pyo3(signature = (chain, kappa, target = None, dt = 1e-3, t_end = 1.0, stride = 1, scheme = "rk4"))]
#[allow(clippy::too_many_arguments)]
fn regularized_flow(
    py: Python<'_>,
    chain: &PyChain,
    kappa: f64,
    target: Option<Rows>,
    dt: f64,
    t_end: f64,
    stride: usize,
    scheme: &str,
) -> PyResult<Py<PyAny>> {
    let spec = integrator(dt, t_end, stride, scheme)?;
    dispatch!(chain.0, w => flow_result(
        py,
        flows::regularized_flow(w, &loss_for(target.as_ref())?, kappa, &spec).map_err(err)?
    ))
}

fn stochastic_spec(dt: f64, t_end: f64, burn_in: f64, sample_every: usize, stride: usize) -> StochasticSpec {
    StochasticSpec {
        burn_in,
        sample_every,
        trace_every: stride,
        ..StochasticSpec::new(dt, t_end)
    }
}

/// Euler-Maruyama for `dw = -kappa w dt + sqrt(2/beta) dB`.
#[pyfunction]
#[pyo3(signature = (chain, kappa, beta, dt = 1e-2, t_end = 10.0, burn_in = 0.0, sample_every = 1, stride = 1, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn ou_noise(
    py: Python<'_>,
    chain: &PyChain,
    kappa: f64,
    beta: f64,
    dt: f64,
    t_end: f64,
    burn_in: f64,
    sample_every: usize,
    stride: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let spec = stochastic_spec(dt, t_end, burn_in, sample_every, stride);
    dispatch!(chain.0, w => stochastic_result(py, flows::ou_noise(w, kappa, beta, &spec, seed).map_err(err)?))
}

/// Euler-Maruyama for the Langevin dynamics of `E + kappa ||w||^2 / 2`.
#[pyfunction]
#[pyo3(signature = (chain, kappa, beta, target = None, dt = 1e-2, t_end = 10.0, burn_in = 0.0, sample_every = 1, stride = 1, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn langevin_flow(
    py: Python<'_>,
    chain: &PyChain,
    kappa: f64,
    beta: f64,
    target: Option<Rows>,
    dt: f64,
    t_end: f64,
    burn_in: f64,
    sample_every: usize,
    stride: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let spec = stochastic_spec(dt, t_end, burn_in, sample_every, stride);
    dispatch!(chain.0, w => stochastic_result(
        py,
        flows::langevin_flow(w, &loss_for(target.as_ref())?, kappa, beta, &spec, seed).map_err(err)?
    ))
}

fn minimization<T: Scalar>(py: Python<'_>, r: variational::MinimizationResult<T>) -> PyResult<Py<PyAny>> {
    let out = to_py(py, &minimization_to_json(&r))?;
    out.bind(py).set_item("minimizer", wrap(r.minimizer))?;
    Ok(out)
}

fn minimize_options(restarts: usize, seed: u64, init_scale: f64) -> MinimizeOptions {
    MinimizeOptions {
        init_scale,
        ..MinimizeOptions::default().with_restarts(restarts, seed)
    }
}

/// Minimize `||w||^2` over the fiber of `x`.
#[pyfunction]
#[pyo3(signature = (x, depth, restarts = 4, seed = 0, init_scale = 0.5, field = "real"))]
fn minimize_ridge(
    py: Python<'_>,
    x: Rows,
    depth: usize,
    restarts: usize,
    seed: u64,
    init_scale: f64,
    field: &str,
) -> PyResult<Py<PyAny>> {
    let opts = minimize_options(restarts, seed, init_scale);
    match parse_field(field)? {
        Field::Real => minimization(py, variational::minimize_ridge_on_fiber(&to_mat::<f64>(&x)?, depth, &opts).map_err(err)?),
        Field::Complex => minimization(
            py,
            variational::minimize_ridge_on_fiber(&to_mat::<Complex64>(&x)?, depth, &opts).map_err(err)?,
        ),
    }
}

/// Minimize `sum_k ||W_k||_p` over the fiber of `x`, `1 < p < inf`.
#[pyfunction]
#[pyo3(signature = (x, depth, p, restarts = 4, seed = 0, init_scale = 0.5, field = "real"))]
#[allow(clippy::too_many_arguments)]
fn minimize_schatten(
    py: Python<'_>,
    x: Rows,
    depth: usize,
    p: f64,
    restarts: usize,
    seed: u64,
    init_scale: f64,
    field: &str,
) -> PyResult<Py<PyAny>> {
    let opts = minimize_options(restarts, seed, init_scale);
    match parse_field(field)? {
        Field::Real => minimization(
            py,
            variational::minimize_schatten_on_fiber(&to_mat::<f64>(&x)?, depth, p, &opts).map_err(err)?,
        ),
        Field::Complex => minimization(
            py,
            variational::minimize_schatten_on_fiber(&to_mat::<Complex64>(&x)?, depth, p, &opts).map_err(err)?,
        ),
    }
}

#[pyfunction]
#[pyo3(signature = (x, depth, trials = 8, seed = 0, field = "real"))]
fn verify_kempf_ness(py: Python<'_>, x: Rows, depth: usize, trials: usize, seed: u64, field: &str) -> PyResult<Py<PyAny>> {
    let rep = match parse_field(field)? {
        Field::Real => variational::verify_kempf_ness(&to_mat::<f64>(&x)?, depth, trials, seed),
        Field::Complex => variational::verify_kempf_ness(&to_mat::<Complex64>(&x)?, depth, trials, seed),
    }
    .map_err(err)?;
    to_py(py, &serde_json::to_value(rep).expect("report serializes"))
}

fn balanced<T: Scalar>(py: Python<'_>, a: &Rows, b: &Rows, c: &Rows, opts: &BalanceOptions) -> PyResult<Py<PyAny>> {
    let sys = StateSpace::<T>::new(to_mat(a)?, to_mat(b)?, to_mat(c)?).map_err(err)?;
    let r = realization::balance_realization(&sys, opts).map_err(err)?;
    to_py(py, &balancing_to_json(&r))
}

/// Minimize `||MAM^{-1}||^2 + ||MB||^2 + ||CM^{-1}||^2` over invertible `M`.
#[pyfunction]
#[pyo3(signature = (a, b, c, restarts = 1, seed = 0, init_scale = 0.0, field = "real"))]
#[allow(clippy::too_many_arguments)]
fn balance_realization(
    py: Python<'_>,
    a: Rows,
    b: Rows,
    c: Rows,
    restarts: usize,
    seed: u64,
    init_scale: f64,
    field: &str,
) -> PyResult<Py<PyAny>> {
    let opts = BalanceOptions {
        restarts,
        seed,
        init_scale,
        ..BalanceOptions::default()
    };
    match parse_field(field)? {
        Field::Real => balanced::<f64>(py, &a, &b, &c, &opts),
        Field::Complex => balanced::<Complex64>(py, &a, &b, &c, &opts),
    }
}

/// The invariant battery run by `dln verify`.
#[pyfunction]
#[pyo3(signature = (d = 2, depth = 3, seed = 0, samples = 20, trials = 8, field = "real"))]
fn run_battery(py: Python<'_>, d: usize, depth: usize, seed: u64, samples: usize, trials: usize, field: &str) -> PyResult<Py<PyAny>> {
    let cfg = BatteryConfig {
        field: parse_field(field)?,
        d,
        n: depth,
        seed,
        samples,
        trials,
        fault: None,
    };
    to_py(py, &serde_json::to_value(battery(&cfg).map_err(err)?).expect("report serializes"))
}

#[pymodule(name = "dln")]
fn dln_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyChain>()?;
    m.add_function(wrap_pyfunction!(regularizing_flow, m)?)?;
    m.add_function(wrap_pyfunction!(ness_flow, m)?)?;
    m.add_function(wrap_pyfunction!(learning_flow, m)?)?;
    m.add_function(wrap_pyfunction!(regularized_flow, m)?)?;
    m.add_function(wrap_pyfunction!(ou_noise, m)?)?;
    m.add_function(wrap_pyfunction!(langevin_flow, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_ridge, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_schatten, m)?)?;
    m.add_function(wrap_pyfunction!(verify_kempf_ness, m)?)?;
    m.add_function(wrap_pyfunction!(balance_realization, m)?)?;
    m.add_function(wrap_pyfunction!(run_battery, m)?)?;
    Ok(())
}
