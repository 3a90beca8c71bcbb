//! Python bindings for `catsynth`.
//!
//! States cross the boundary as `State` objects wrapping a single-mode
//! density operator; everything else is plain floats, lists and dicts.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use catsynth::css::{self, CssTarget, GridSpec, Parity, SqueezeAxis, TargetBank};
use catsynth::fock::{self, Cutoff, DensityOperator, FockVector};
use catsynth::gaussian::{self, LossBudget};
use catsynth::herald::{self, Detector, HeraldScenario, MixingParam};
use catsynth::pipeline::{self, ScenarioConfig};
use catsynth::tomo::{self, MleConfig, QuadratureSample};
use catsynth::wigner;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cutoff(n_max: usize) -> PyResult<Cutoff> {
    Cutoff::new(n_max).map_err(err)
}

fn parity(name: &str) -> PyResult<Parity> {
    match name {
        "even" => Ok(Parity::Even),
        "odd" => Ok(Parity::Odd),
        _ => Err(PyValueError::new_err(format!("parity must be 'even' or 'odd', got {name:?}"))),
    }
}

fn parity_name(p: Parity) -> &'static str {
    match p {
        Parity::Even => "even",
        Parity::Odd => "odd",
    }
}

/// Single-mode density operator.
#[pyclass(name = "State", module = "catsynth_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: DensityOperator,
}

impl From<DensityOperator> for PyState {
    fn from(inner: DensityOperator) -> Self {
        PyState { inner }
    }
}

#[pymethods]
impl PyState {
    /// Parses the JSON written by `to_json` or by a run's `density.json`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        DensityOperator::from_json(text).map(Into::into).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn n_max(&self) -> usize {
        self.inner.cutoff().n_max()
    }

    fn populations(&self) -> Vec<f64> {
        self.inner.populations()
    }

    fn trace(&self) -> f64 {
        self.inner.trace()
    }

    fn purity(&self) -> f64 {
        self.inner.purity()
    }

    /// Row-major nested list of complex matrix elements.
    fn matrix(&self) -> Vec<Vec<Complex64>> {
        let m = self.inner.matrix();
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
    }

    fn loss(&self, eta: f64) -> PyResult<Self> {
        gaussian::loss_channel(&self.inner, eta).map(Into::into).map_err(err)
    }

    fn dephase(&self, sigma_rad: f64) -> PyResult<Self> {
        gaussian::dephase_channel(&self.inner, sigma_rad).map(Into::into).map_err(err)
    }

    fn fidelity(&self, other: &PyState) -> PyResult<f64> {
        fock::uhlmann_fidelity(&self.inner, &other.inner).map_err(err)
    }

    fn wigner_at(&self, x: f64, p: f64) -> PyResult<f64> {
        wigner::wigner_at(&self.inner, x, p).map_err(err)
    }

    /// Wigner function on a square grid; returns `(axis, values)` with
    /// `values[i][j] = W(axis[i], axis[j])`.
    #[pyo3(signature = (range = 6.0, points = 121))]
    fn wigner(&self, range: f64, points: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let axis = wigner::linspace(-range, range, points);
        let g = wigner::wigner(&self.inner, &axis, &axis).map_err(err)?;
        let rows = (0..axis.len()).map(|i| (0..axis.len()).map(|j| g.at(i, j)).collect()).collect();
        Ok((axis, rows))
    }

    fn __repr__(&self) -> String {
        format!("State(n_max={}, purity={:.6})", self.inner.cutoff().n_max(), self.inner.purity())
    }
}

#[pyfunction]
fn fock_state(n: usize, n_max: usize) -> PyResult<PyState> {
    Ok(FockVector::fock(n, cutoff(n_max)?).map_err(err)?.to_density().into())
}

#[pyfunction]
fn core_state(n: usize, epsilon: f64, lam: f64, n_max: usize) -> PyResult<PyState> {
    let c = herald::core_state(n, epsilon, lam, cutoff(n_max)?).map_err(err)?;
    Ok(c.vector.to_density().into())
}

/// Squeezed even or odd cat with real α of size `alpha_sq`.
#[pyfunction]
#[pyo3(signature = (alpha_sq, squeeze_db, parity = "even", n_max = 40, axis = "x"))]
fn squeezed_css(alpha_sq: f64, squeeze_db: f64, parity: &str, n_max: usize, axis: &str) -> PyResult<PyState> {
    let axis = match axis {
        "x" => SqueezeAxis::X,
        "p" => SqueezeAxis::P,
        _ => return Err(PyValueError::new_err("axis must be 'x' or 'p'")),
    };
    let t = CssTarget::new(alpha_sq, squeeze_db, self::parity(parity)?).map_err(err)?.with_axis(axis);
    Ok(css::squeezed_css(&t, cutoff(n_max)?).map_err(err)?.to_density().into())
}

/// One heralding configuration.
#[pyclass(name = "Scenario", module = "catsynth_py", frozen, skip_from_py_object)]
struct PyScenario {
    inner: HeraldScenario,
}

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (lam, theta_deg = None, epsilon = None, n_herald = 2, n_max = 12, detector = "pnr",
                        eta_opo = 1.0, eta_det = 1.0, eta_herald = 1.0, bs_phase = 0.0, dark_click_prob = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        lam: f64,
        theta_deg: Option<f64>,
        epsilon: Option<f64>,
        n_herald: usize,
        n_max: usize,
        detector: &str,
        eta_opo: f64,
        eta_det: f64,
        eta_herald: f64,
        bs_phase: f64,
        dark_click_prob: f64,
    ) -> PyResult<Self> {
        let mixing = match (theta_deg, epsilon) {
            (Some(t), None) => MixingParam::from_theta_deg(t),
            (None, Some(e)) => MixingParam::from_epsilon(e),
            _ => return Err(PyValueError::new_err("give exactly one of theta_deg or epsilon")),
        }
        .map_err(err)?;
        let detector = match detector {
            "pnr" => Detector::Pnr,
            "coincidence_onoff" => Detector::CoincidenceOnoff,
            _ => return Err(PyValueError::new_err("detector must be 'pnr' or 'coincidence_onoff'")),
        };
        let mut s = HeraldScenario::new(lam, mixing, n_herald, cutoff(n_max)?)
            .and_then(|s| s.with_detector(detector))
            .and_then(|s| s.with_losses(LossBudget::new(eta_opo, eta_det, eta_herald)?))
            .map_err(err)?;
        s.bs_phase = bs_phase;
        s.dark_click_prob = dark_click_prob;
        s.validate().map_err(err)?;
        Ok(PyScenario { inner: s })
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.mixing.epsilon()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    /// Heralded signal state and its probability.
    fn herald(&self) -> PyResult<(PyState, f64)> {
        let out = herald::herald(&self.inner).map_err(err)?;
        Ok((out.state.into(), out.herald_probability))
    }

    /// Signal after the output losses; `include_detection` also applies η_det.
    #[pyo3(signature = (include_detection = false))]
    fn output(&self, include_detection: bool) -> PyResult<PyState> {
        let out = herald::herald(&self.inner).map_err(err)?;
        herald::output_loss(&out, &self.inner.losses, include_detection)
            .map(Into::into)
            .map_err(err)
    }

    /// Probability of each photon-number outcome on the idler.
    fn distribution(&self) -> PyResult<Vec<f64>> {
        herald::herald_distribution(&self.inner).map_err(err)
    }
}

fn grid_from(grid: Option<&Bound<'_, PyDict>>) -> PyResult<GridSpec> {
    let Some(d) = grid else { return Ok(GridSpec::default()) };
    let mut g = GridSpec::default();
    for (k, v) in d.iter() {
        let key: String = k.extract()?;
        match key.as_str() {
            "alpha_sq_min" => g.alpha_sq_min = v.extract()?,
            "alpha_sq_max" => g.alpha_sq_max = v.extract()?,
            "alpha_sq_step" => g.alpha_sq_step = v.extract()?,
            "db_min" => g.db_min = v.extract()?,
            "db_max" => g.db_max = v.extract()?,
            "db_step" => g.db_step = v.extract()?,
            "target_cutoff" => g.target_cutoff = v.extract()?,
            "refine" => g.refine = v.extract()?,
            _ => return Err(PyValueError::new_err(format!("unknown grid key {key:?}"))),
        }
    }
    g.validate().map_err(err)?;
    Ok(g)
}

/// Fidelity landscape of `state` against squeezed cats.
#[pyclass(name = "Landscape", module = "catsynth_py", frozen, skip_from_py_object)]
struct PyLandscape {
    #[pyo3(get)]
    alpha_sq: Vec<f64>,
    #[pyo3(get)]
    db: Vec<f64>,
    /// `values[i][j]` at `(alpha_sq[i], db[j])`.
    #[pyo3(get)]
    values: Vec<Vec<f64>>,
    #[pyo3(get)]
    parity: &'static str,
    /// `(alpha_sq, db, fidelity)` after refinement.
    #[pyo3(get)]
    best: (f64, f64, f64),
    #[pyo3(get)]
    grid_best: (f64, f64, f64),
}

#[pyfunction]
#[pyo3(signature = (state, parity = None, grid = None))]
fn landscape(state: &PyState, parity: Option<&str>, grid: Option<&Bound<'_, PyDict>>) -> PyResult<PyLandscape> {
    let parity = match parity {
        Some(p) => self::parity(p)?,
        None => {
            // parity of the heavier sector
            let p = state.inner.populations();
            let even: f64 = p.iter().step_by(2).sum();
            if even >= 0.5 {
                Parity::Even
            } else {
                Parity::Odd
            }
        }
    };
    let l = css::best_fit_css(&state.inner, parity, &grid_from(grid)?).map_err(err)?;
    let nd = l.db_grid.len();
    Ok(PyLandscape {
        values: l.values.chunks(nd).map(|r| r.to_vec()).collect(),
        alpha_sq: l.alpha_sq_grid,
        db: l.db_grid,
        parity: parity_name(parity),
        best: (l.argmax.alpha_sq, l.argmax.db, l.argmax.fidelity),
        grid_best: (l.grid_argmax.alpha_sq, l.grid_argmax.db, l.grid_argmax.fidelity),
    })
}

/// Best-fit curve over ε/λ; one dict per ratio.
#[pyfunction]
#[pyo3(signature = (n, ratios, lam, grid = None))]
fn protocol_curve<'py>(
    py: Python<'py>,
    n: usize,
    ratios: Vec<f64>,
    lam: f64,
    grid: Option<&Bound<'py, PyDict>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let bank = TargetBank::new(&grid_from(grid)?, Parity::of(n)).map_err(err)?;
    let curve = css::protocol_curve_with_bank(n, &ratios, lam, &bank).map_err(err)?;
    curve
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("ratio", p.ratio)?;
            d.set_item("fidelity_star", p.fidelity_star)?;
            d.set_item("alpha_sq_star", p.alpha_sq_star)?;
            d.set_item("db_star", p.db_star)?;
            d.set_item("w_vacuum", p.w_vacuum)?;
            d.set_item("w_nphoton", p.w_nphoton)?;
            Ok(d)
        })
        .collect()
}

/// Seeded homodyne samples as `(phase_rad, quadrature)` pairs.
#[pyfunction]
#[pyo3(signature = (state, n_samples, seed, n_phases = 12))]
fn sample_homodyne(state: &PyState, n_samples: usize, seed: u64, n_phases: usize) -> PyResult<Vec<(f64, f64)>> {
    let s = tomo::sample_homodyne(&state.inner, &tomo::uniform_phases(n_phases), n_samples, seed).map_err(err)?;
    Ok(s.into_iter().map(|q| (q.phase, q.value)).collect())
}

/// Maximum-likelihood reconstruction. Returns the state and a dict with
/// `iterations`, `converged`, `log_likelihood` and `dropped_samples`.
#[pyfunction]
#[pyo3(signature = (samples, n_max, eta = 1.0, max_iters = 2000, tol = 1e-6))]
fn mle_reconstruct<'py>(
    py: Python<'py>,
    samples: Vec<(f64, f64)>,
    n_max: usize,
    eta: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<(PyState, Bound<'py, PyDict>)> {
    let samples: Vec<_> = samples.into_iter().map(|(phase, value)| QuadratureSample { phase, value }).collect();
    let mut cfg = MleConfig::new(cutoff(n_max)?).with_eta(eta);
    cfg.max_iters = max_iters;
    cfg.tol = tol;
    let r = py.detach(|| tomo::mle_reconstruct(&samples, &cfg)).map_err(err)?;
    let info = PyDict::new(py);
    info.set_item("iterations", r.iterations)?;
    info.set_item("converged", r.converged)?;
    info.set_item("log_likelihood", r.log_likelihood)?;
    info.set_item("dropped_samples", r.dropped_samples)?;
    Ok((r.state.into(), info))
}

/// Runs a scenario config (JSON text) into `out_dir`; returns the manifest JSON.
#[pyfunction]
fn run_scenario(py: Python<'_>, config_json: &str, out_dir: &str) -> PyResult<String> {
    let cfg = ScenarioConfig::from_json(config_json).map_err(err)?;
    let (manifest, _) = py
        .detach(|| pipeline::run_scenario(&cfg, std::path::Path::new(out_dir)))
        .map_err(err)?;
    manifest.to_json().map_err(err)
}

#[pymodule]
fn catsynth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyState>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyLandscape>()?;
    m.add_function(wrap_pyfunction!(fock_state, m)?)?;
    m.add_function(wrap_pyfunction!(core_state, m)?)?;
    m.add_function(wrap_pyfunction!(squeezed_css, m)?)?;
    m.add_function(wrap_pyfunction!(landscape, m)?)?;
    m.add_function(wrap_pyfunction!(protocol_curve, m)?)?;
    m.add_function(wrap_pyfunction!(sample_homodyne, m)?)?;
    m.add_function(wrap_pyfunction!(mle_reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
