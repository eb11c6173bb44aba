//! Python bindings: link parameters, constellations, single-symbol
//! detectors and the TOML-driven Monte Carlo runs.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nlwdm::config::RunConfig;
use nlwdm::detect::md;
use nlwdm::harness::{asymptotic_check as run_asymptotic, run_sweep as sweep, scatter_dump};
use nlwdm::physparams::{dbm_to_watt, DerivedParams, FiberParams};
use nlwdm::waveform::{Constellation, InterferenceSet};

fn py_err(e: nlwdm::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Link parameters in engineering units (km, dB, ps²/km).
#[pyclass(name = "FiberParams", module = "pynlwdm", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
struct PyFiberParams {
    span_length: f64,
    attenuation_db: f64,
    gamma: f64,
    n_span: u32,
    symbol_rate: f64,
    photon_energy: f64,
    noise_figure_db: f64,
    beta2: f64,
    channel_spacing: f64,
}

impl From<FiberParams> for PyFiberParams {
    fn from(p: FiberParams) -> Self {
        Self {
            span_length: p.span_length,
            attenuation_db: p.attenuation_db,
            gamma: p.gamma,
            n_span: p.n_span,
            symbol_rate: p.symbol_rate,
            photon_energy: p.photon_energy,
            noise_figure_db: p.noise_figure_db,
            beta2: p.beta2,
            channel_spacing: p.channel_spacing,
        }
    }
}

impl PyFiberParams {
    fn inner(&self) -> FiberParams {
        FiberParams {
            span_length: self.span_length,
            attenuation_db: self.attenuation_db,
            gamma: self.gamma,
            n_span: self.n_span,
            symbol_rate: self.symbol_rate,
            photon_energy: self.photon_energy,
            noise_figure_db: self.noise_figure_db,
            beta2: self.beta2,
            channel_spacing: self.channel_spacing,
        }
    }
}

#[pymethods]
impl PyFiberParams {
    /// Keyword arguments override the reference single-span link.
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut p = Self::from(FiberParams::reference());
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                match key.as_str() {
                    "span_length" => p.span_length = v.extract()?,
                    "attenuation_db" => p.attenuation_db = v.extract()?,
                    "gamma" => p.gamma = v.extract()?,
                    "n_span" => p.n_span = v.extract()?,
                    "symbol_rate" => p.symbol_rate = v.extract()?,
                    "photon_energy" => p.photon_energy = v.extract()?,
                    "noise_figure_db" => p.noise_figure_db = v.extract()?,
                    "beta2" => p.beta2 = v.extract()?,
                    "channel_spacing" => p.channel_spacing = v.extract()?,
                    other => return Err(PyValueError::new_err(format!("unknown fiber parameter `{other}`"))),
                }
            }
        }
        Ok(p)
    }

    fn derive(&self) -> PyResult<PyDerivedParams> {
        self.inner().derive().map(PyDerivedParams).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner())
    }
}

#[pyclass(name = "DerivedParams", module = "pynlwdm", frozen)]
struct PyDerivedParams(DerivedParams);

#[pymethods]
impl PyDerivedParams {
    /// Effective length [km].
    #[getter]
    fn eff_length(&self) -> f64 {
        self.0.eff_length
    }

    /// Nonlinearity coefficient [1/W].
    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }

    /// Noise PSD [W/Hz].
    #[getter]
    fn noise_psd(&self) -> f64 {
        self.0.noise_psd
    }

    #[getter]
    fn gain_linear(&self) -> f64 {
        self.0.gain_linear
    }

    /// Attenuation [Np/km].
    #[getter]
    fn alpha_np(&self) -> f64 {
        self.0.alpha_np
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

#[pyclass(name = "Constellation", module = "pynlwdm", frozen)]
struct PyConstellation(Constellation);

#[pymethods]
impl PyConstellation {
    #[new]
    fn new(points: Vec<Complex64>, priors: Vec<f64>) -> PyResult<Self> {
        Constellation::new(points, priors).map(Self).map_err(py_err)
    }

    /// Square QAM with average energy `es` [J] and uniform priors.
    #[staticmethod]
    fn square_qam(order: usize, es: f64) -> PyResult<Self> {
        Constellation::square_qam(order, es).map(Self).map_err(py_err)
    }

    /// 16-QAM at launch power `power_dbm` for symbol period `period` [s].
    #[staticmethod]
    #[pyo3(signature = (power_dbm, period = 1e-10))]
    fn qam16_at(power_dbm: f64, period: f64) -> Self {
        Self(Constellation::qam16(dbm_to_watt(power_dbm) * period))
    }

    fn with_priors(&self, priors: Vec<f64>) -> PyResult<Self> {
        self.0.with_priors(priors).map(Self).map_err(py_err)
    }

    #[getter]
    fn points(&self) -> Vec<Complex64> {
        self.0.points().to_vec()
    }

    #[getter]
    fn priors(&self) -> Vec<f64> {
        self.0.priors().to_vec()
    }

    #[getter]
    fn symbol_energy(&self) -> f64 {
        self.0.symbol_energy()
    }

    /// Index of the nearest point.
    fn detect_md(&self, v: Complex64) -> usize {
        md(v, &self.0)
    }

    /// Interference levels seen by this alphabet against `interferer`.
    fn interference_set(&self, interferer: &PyConstellation) -> PyInterferenceSet {
        PyInterferenceSet(InterferenceSet::build(&self.0, &interferer.0))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "InterferenceSet", module = "pynlwdm", frozen)]
struct PyInterferenceSet(InterferenceSet);

#[pymethods]
impl PyInterferenceSet {
    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    #[getter]
    fn amplitude_classes(&self) -> Vec<f64> {
        self.0.amplitude_classes().to_vec()
    }

    /// Pr(s = s_j | amplitude class c).
    fn cond_prob(&self, j: usize, c: usize) -> PyResult<f64> {
        if j >= self.0.len() || c >= self.0.amplitude_classes().len() {
            return Err(PyValueError::new_err("level or class index out of range"));
        }
        Ok(self.0.cond_prob(j, c))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn parse(config: &str) -> PyResult<RunConfig> {
    RunConfig::from_toml_str(config).map_err(py_err)
}

/// Derived constants of the `[fiber]` section of a TOML run configuration.
#[pyfunction]
fn derive_params(config: &str) -> PyResult<PyDerivedParams> {
    parse(config)?.fiber.derive().map(PyDerivedParams).map_err(py_err)
}

#[pyfunction]
fn config_hash(config: &str) -> PyResult<String> {
    Ok(parse(config)?.config_hash())
}

/// SER sweep of the `[sweep]` section; one dict per (power, receiver).
#[pyfunction]
fn run_sweep<'py>(py: Python<'py>, config: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = parse(config)?;
    let hash = cfg.config_hash();
    let exp = cfg.experiment();
    let out = py.detach(|| sweep(&exp, &hash)).map_err(py_err)?;
    out.records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("power_dbm", r.power_dbm)?;
            d.set_item("receiver", r.receiver.name())?;
            d.set_item("symbols", r.symbols)?;
            d.set_item("errors", r.errors)?;
            d.set_item("ser", r.ser)?;
            d.set_item("stderr", r.stderr)?;
            d.set_item("censored", r.censored)?;
            d.set_item("seed", r.seed)?;
            d.set_item("config_hash", &r.config_hash)?;
            Ok(d)
        })
        .collect()
}

/// `(transmitted, demodulated)` symbol pairs of the `[scatter]` section.
#[pyfunction]
fn scatter(py: Python<'_>, config: &str) -> PyResult<Vec<(Complex64, Complex64)>> {
    let cfg = parse(config)?;
    let exp = cfg.experiment();
    let s = cfg.scatter.clone();
    let rows = py
        .detach(|| scatter_dump(&exp, s.power_dbm, s.demod, s.n_symbols))
        .map_err(py_err)?;
    Ok(rows
        .iter()
        .map(|r| (Complex64::new(r.tx_symbol_re, r.tx_symbol_im), Complex64::new(r.out_re, r.out_im)))
        .collect())
}

/// High-power SER of the `[asymptotic]` section: receiver name to `(ser, limit)`.
#[pyfunction]
fn asymptotic_check<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = parse(config)?;
    let hash = cfg.config_hash();
    let exp = cfg.experiment();
    let a = cfg.asymptotic.clone();
    let rep = py
        .detach(|| run_asymptotic(&exp, a.power_dbm, a.n_symbols, &hash))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    for e in &rep.entries {
        d.set_item(e.receiver.name(), (e.ser, e.limit))?;
    }
    Ok(d)
}

#[pymodule]
fn pynlwdm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFiberParams>()?;
    m.add_class::<PyDerivedParams>()?;
    m.add_class::<PyConstellation>()?;
    m.add_class::<PyInterferenceSet>()?;
    m.add_function(wrap_pyfunction!(derive_params, m)?)?;
    m.add_function(wrap_pyfunction!(config_hash, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(scatter, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_check, m)?)?;
    Ok(())
}
