use nalgebra::DVector;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::netpass::analysis::{self, AnalysisOptions};
use ::netpass::model::{self, Schedule};
use ::netpass::numerics::{matrix_from_rows, matrix_to_rows};
use ::netpass::sim::{self, EnsembleOptions, InputSignal};
use ::netpass::synthesis::{self, EtaSpec, SynthesisOptions};
use ::netpass::Error;

type Rows = Vec<Vec<f64>>;

create_exception!(netpass, IndeterminateError, PyException, "The solver found no verified point within budget.");
create_exception!(netpass, VerificationError, PyException, "A returned certificate failed independent verification.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Indeterminate(_) => IndeterminateError::new_err(e.to_string()),
        Error::VerificationFailed(_) | Error::SingularTransform(_) => VerificationError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &Rows) -> PyResult<::netpass::numerics::Matrix> {
    matrix_from_rows(m).map_err(to_py)
}

#[pyclass(frozen, module = "netpass")]
struct Plant {
    inner: model::Plant,
}

#[pymethods]
impl Plant {
    #[new]
    fn new(a: Rows, b1: Rows, b2: Rows, c1: Rows, d11: Rows, d12: Rows) -> PyResult<Self> {
        let inner = model::Plant::new(rows(&a)?, rows(&b1)?, rows(&b2)?, rows(&c1)?, rows(&d11)?, rows(&d12)?)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn scalar(a: f64, b1: f64, b2: f64, c1: f64, d11: f64, d12: f64) -> Self {
        Self { inner: model::Plant::scalar(a, b1, b2, c1, d11, d12) }
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m1(&self) -> usize {
        self.inner.m1()
    }

    #[getter]
    fn m2(&self) -> usize {
        self.inner.m2()
    }

    fn __repr__(&self) -> String {
        format!("Plant(n={}, m1={}, m2={})", self.inner.n(), self.inner.m1(), self.inner.m2())
    }
}

#[pyclass(frozen, module = "netpass")]
struct LossModel {
    inner: model::LossModel,
}

#[pymethods]
impl LossModel {
    #[new]
    fn new(alpha1: f64, alpha2: f64) -> PyResult<Self> {
        Ok(Self { inner: model::LossModel::new(alpha1, alpha2).map_err(to_py)? })
    }

    #[getter]
    fn alpha1(&self) -> f64 {
        self.inner.alpha1()
    }

    #[getter]
    fn alpha2(&self) -> f64 {
        self.inner.alpha2()
    }

    /// Probabilities of `(θ1, θ2)`, indexed `[θ1][θ2]`.
    fn mode_distribution(&self) -> [[f64; 2]; 2] {
        self.inner.mode_distribution().table()
    }

    fn __repr__(&self) -> String {
        format!("LossModel(alpha1={}, alpha2={})", self.inner.alpha1(), self.inner.alpha2())
    }
}

#[pyclass(frozen, get_all, module = "netpass")]
struct SynthesisResult {
    k: Rows,
    x: Rows,
    y: Rows,
    p: Rows,
    eta: f64,
    rho: f64,
}

#[pymethods]
impl SynthesisResult {
    fn __repr__(&self) -> String {
        format!("SynthesisResult(eta={}, rho={}, k={:?})", self.eta, self.rho, self.k)
    }
}

fn gain(plant: &Plant, k: Option<Rows>) -> PyResult<model::Gain> {
    let g = match k {
        Some(k) => model::Gain::new(rows(&k)?).map_err(to_py)?,
        None => model::Gain::zeros(plant.inner.m2(), plant.inner.n()),
    };
    g.check_dims(&plant.inner).map_err(to_py)?;
    Ok(g)
}

fn schedule(plant: &Plant, s1: Option<Vec<usize>>, s2: Option<Vec<usize>>) -> PyResult<Schedule> {
    match (s1, s2) {
        (None, None) => Ok(Schedule::FullPacket),
        (Some(s1), Some(s2)) => Schedule::periodic(s1, s2, plant.inner.p2(), plant.inner.m2()).map_err(to_py),
        _ => Err(PyValueError::new_err("s1 and s2 must be given together")),
    }
}

fn signal(kind: &str, sigma: f64, amplitude: f64, period: f64, step: usize) -> PyResult<InputSignal> {
    let s = match kind {
        "zero" => InputSignal::Zero,
        "white_noise" => InputSignal::WhiteNoise { sigma },
        "sinusoid" => InputSignal::Sinusoid { amplitude, period },
        "impulse" => InputSignal::Impulse { magnitude: amplitude, step },
        other => return Err(PyValueError::new_err(format!("unknown signal kind {other:?}"))),
    };
    s.validate().map_err(to_py)?;
    Ok(s)
}

/// Second-moment spectral radius of the closed loop.
#[pyfunction]
#[pyo3(signature = (plant, loss, k=None, s1=None, s2=None))]
fn sms<'py>(
    py: Python<'py>,
    plant: &Plant,
    loss: &LossModel,
    k: Option<Rows>,
    s1: Option<Vec<usize>>,
    s2: Option<Vec<usize>>,
) -> PyResult<Bound<'py, PyDict>> {
    let g = gain(plant, k)?;
    let sched = schedule(plant, s1, s2)?;
    let r = analysis::closed_loop_sms(&plant.inner, &g, &sched, &loss.inner.mode_distribution()).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("rho", r.rho)?;
    d.set_item("stable", r.stable)?;
    d.set_item("borderline", r.borderline)?;
    Ok(d)
}

/// Certify second-moment stability; returns one `P` per schedule slot.
#[pyfunction]
#[pyo3(signature = (plant, loss, k=None, s1=None, s2=None, seed=0))]
fn stability(
    plant: &Plant,
    loss: &LossModel,
    k: Option<Rows>,
    s1: Option<Vec<usize>>,
    s2: Option<Vec<usize>>,
    seed: u64,
) -> PyResult<Vec<Rows>> {
    let g = gain(plant, k)?;
    let sched = schedule(plant, s1, s2)?;
    let mut opts = ::netpass::lmi::SolveOptions::default();
    opts.seed = seed;
    let cert = analysis::stability_lmi(&plant.inner, &g, &sched, &loss.inner.mode_distribution(), &opts).map_err(to_py)?;
    Ok(cert.p.iter().map(|p| matrix_to_rows(p.as_matrix())).collect())
}

/// Certify strict passivity at `eta`; returns the storage matrix `P`.
#[pyfunction]
#[pyo3(signature = (plant, loss, eta, k=None))]
fn passivity(plant: &Plant, loss: &LossModel, eta: f64, k: Option<Rows>) -> PyResult<Rows> {
    let g = gain(plant, k)?;
    let cert = analysis::passivity_lmi(&plant.inner, &g, &loss.inner.mode_distribution(), eta, &AnalysisOptions::default())
        .map_err(to_py)?;
    Ok(matrix_to_rows(cert.p.as_matrix()))
}

/// Largest certified dissipation level, to within `tol`.
#[pyfunction]
#[pyo3(signature = (plant, loss, k=None, tol=1e-3))]
fn max_dissipation(plant: &Plant, loss: &LossModel, k: Option<Rows>, tol: f64) -> PyResult<f64> {
    let g = gain(plant, k)?;
    let m = analysis::max_dissipation(&plant.inner, &g, &loss.inner.mode_distribution(), tol, &AnalysisOptions::default())
        .map_err(to_py)?;
    Ok(m.eta_star)
}

/// Passivity-based state feedback; `eta=None` maximizes the dissipation.
#[pyfunction]
#[pyo3(signature = (plant, loss, eta=None))]
fn synthesize(plant: &Plant, loss: &LossModel, eta: Option<f64>) -> PyResult<SynthesisResult> {
    let spec = eta.map_or(EtaSpec::Maximize, EtaSpec::Fixed);
    let r = synthesis::synthesize(&plant.inner, &Schedule::FullPacket, &loss.inner, spec, &SynthesisOptions::default())
        .map_err(to_py)?;
    Ok(SynthesisResult {
        k: matrix_to_rows(r.k.matrix()),
        x: matrix_to_rows(r.x.as_matrix()),
        y: matrix_to_rows(&r.y),
        p: matrix_to_rows(r.passivity.p.as_matrix()),
        eta: r.eta,
        rho: r.rho,
    })
}

/// One trajectory; returns the states `x(0..=horizon)`.
#[pyfunction]
#[pyo3(signature = (plant, loss, horizon, k=None, seed=0, x0=None, signal="zero", sigma=1.0, amplitude=1.0, period=10.0, step=0))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    plant: &Plant,
    loss: &LossModel,
    horizon: usize,
    k: Option<Rows>,
    seed: u64,
    x0: Option<Vec<f64>>,
    signal: &str,
    sigma: f64,
    amplitude: f64,
    period: f64,
    step: usize,
) -> PyResult<Rows> {
    let g = gain(plant, k)?;
    let sig = self::signal(signal, sigma, amplitude, period, step)?;
    let x0 = x0.map(DVector::from_vec);
    let tr = sim::simulate(&plant.inner, &g, &Schedule::FullPacket, &loss.inner, &sig, horizon, seed, x0.as_ref())
        .map_err(to_py)?;
    Ok((0..=horizon).map(|i| tr.state(i).iter().copied().collect()).collect())
}

/// Monte Carlo ensemble statistics and the fitted decay rate.
#[pyfunction]
#[pyo3(signature = (plant, loss, horizon, k=None, trials=1000, seed=0, eta=0.0, x0=None, signal="zero", sigma=1.0, amplitude=1.0, period=10.0, step=0))]
#[allow(clippy::too_many_arguments)]
fn ensemble<'py>(
    py: Python<'py>,
    plant: &Plant,
    loss: &LossModel,
    horizon: usize,
    k: Option<Rows>,
    trials: usize,
    seed: u64,
    eta: f64,
    x0: Option<Vec<f64>>,
    signal: &str,
    sigma: f64,
    amplitude: f64,
    period: f64,
    step: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let g = gain(plant, k)?;
    let sig = self::signal(signal, sigma, amplitude, period, step)?;
    let opts = EnsembleOptions { trials, base_seed: seed, eta, x0: x0.map(DVector::from_vec), ..Default::default() };
    let st = py
        .detach(|| sim::ensemble(&plant.inner, &g, &Schedule::FullPacket, &loss.inner, &sig, horizon, &opts))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mean_sq_norm", &st.mean_sq_norm)?;
    d.set_item("sq_norm_se", &st.sq_norm_se)?;
    d.set_item("frac_converged", st.frac_converged)?;
    d.set_item("dissipation_mean", st.dissipation_mean)?;
    d.set_item("dissipation_se", st.dissipation_se)?;
    d.set_item("mode_counts", st.mode_counts)?;
    let decay = sim::decay_fit(&st).ok().map(|f| f.alpha);
    d.set_item("decay_rate", decay)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "netpass")]
fn netpass_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Plant>()?;
    m.add_class::<LossModel>()?;
    m.add_class::<SynthesisResult>()?;
    m.add("IndeterminateError", m.py().get_type::<IndeterminateError>())?;
    m.add("VerificationError", m.py().get_type::<VerificationError>())?;
    m.add_function(wrap_pyfunction!(sms, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    m.add_function(wrap_pyfunction!(passivity, m)?)?;
    m.add_function(wrap_pyfunction!(max_dissipation, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    Ok(())
}
