//! Python bindings: `import cv2x`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cv2x_core::channel::{self, NoiseConfig, PathlossModel};
use cv2x_core::grid::{lookup_mcs, subchannels_needed as core_subchannels_needed, MessageClass, MessageKind};
use cv2x_core::metrics;
use cv2x_core::{engine, Error, SweepAxis};

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn class_of(kind: &str) -> PyResult<MessageClass> {
    match kind {
        "bsm" => Ok(MessageClass::Bsm),
        "hpm" => Ok(MessageClass::Hpm),
        other => Err(PyValueError::new_err(format!("unknown message kind `{other}`"))),
    }
}

/// A validated run configuration.
#[pyclass(name = "RunConfig", module = "cv2x", skip_from_py_object)]
#[derive(Clone)]
pub struct PyRunConfig {
    inner: cv2x_core::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Builds a configuration from TOML text (defaults when omitted) and
    /// `key=value` overrides.
    #[new]
    #[pyo3(signature = (toml=None, overrides=Vec::new()))]
    fn new(toml: Option<&str>, overrides: Vec<String>) -> PyResult<Self> {
        let base: toml::Table = match toml {
            Some(text) => text.parse().map_err(|e| PyValueError::new_err(format!("config parse error: {e}")))?,
            None => toml::Table::try_from(cv2x_core::RunConfig::default()).expect("defaults serialize"),
        };
        let inner = cv2x_core::config::apply_overrides(base, &overrides).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Returns a copy with further overrides applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Self::new(Some(&self.inner.to_toml_string()), overrides)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn vehicles(&self) -> usize {
        self.inner.road.vehicle_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(seed={}, policy={}, vehicles={}, sim_time_s={})",
            self.inner.seed,
            self.inner.policy.kind.as_str(),
            self.inner.road.vehicle_count(),
            self.inner.traffic.sim_time_s
        )
    }
}

/// Metrics of one finished run.
#[pyclass(name = "Metrics", module = "cv2x")]
pub struct PyMetrics {
    inner: cv2x_core::MetricsStore,
}

#[pymethods]
impl PyMetrics {
    #[getter]
    fn n_bins(&self) -> usize {
        self.inner.binning.n_bins()
    }

    fn bin_low(&self, bin: usize) -> f64 {
        self.inner.binning.bin_low(bin)
    }

    /// PRR of `kind` ("bsm" or "hpm") in a distance bin; None when empty.
    fn prr(&self, kind: &str, bin: usize) -> PyResult<Option<f64>> {
        Ok(metrics::prr(&self.inner, class_of(kind)?, bin))
    }

    /// (successes, opportunities) of a bin.
    fn counts(&self, kind: &str, bin: usize) -> PyResult<(u64, u64)> {
        let c = self
            .inner
            .prr_bins
            .get(metrics::class_index(class_of(kind)?))
            .and_then(|b| b.get(bin))
            .ok_or_else(|| PyValueError::new_err("bin out of range"))?;
        Ok((c.successes, c.opportunities))
    }

    fn hpm_gain(&self, bin: usize) -> Option<f64> {
        metrics::hpm_gain(&self.inner, bin)
    }

    fn mean_cbr(&self) -> Option<f64> {
        metrics::mean_cbr(&self.inner)
    }

    /// (mean_ms, p95_ms) information age of a bin; None without samples.
    fn information_age(&self, bin: usize) -> Option<(f64, f64)> {
        metrics::ia_summary(&self.inner, bin).map(|s| (s.mean_ms, s.p95_ms))
    }

    /// Mean effective threshold, SCI decode probability, share of decoded
    /// SCIs above the mean threshold, and their product.
    fn threshold_analysis(&self) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
        let r = metrics::threshold_analysis(&self.inner);
        (r.mean_threshold_dbm, r.p_decode_sci, r.p_rsrp_above, r.exclusion_balance)
    }

    fn summary_json(&self) -> String {
        metrics::summary_json(&self.inner)
    }

    fn prr_csv(&self) -> String {
        metrics::prr_csv(&self.inner)
    }

    fn cbr_csv(&self) -> String {
        metrics::cbr_csv(&self.inner)
    }

    fn threshold_csv(&self) -> String {
        metrics::threshold_csv(&self.inner)
    }

    fn ia_csv(&self) -> String {
        metrics::ia_csv(&self.inner)
    }

    fn write(&self, directory: &str) -> PyResult<()> {
        metrics::write_outputs(&self.inner, std::path::Path::new(directory)).map_err(to_py)
    }
}

/// Runs one simulation. The GIL is released while it runs.
#[pyfunction]
fn run(py: Python<'_>, config: &PyRunConfig) -> PyResult<PyMetrics> {
    let cfg = config.inner.clone();
    let store = py.detach(move || engine::run(&cfg)).map_err(to_py)?;
    Ok(PyMetrics { inner: store })
}

/// One run per value along `axis` ("tx_powers", "densities" or
/// "policies"), on up to `jobs` threads.
#[pyfunction]
#[pyo3(signature = (config, axis, values, jobs=1))]
fn sweep(py: Python<'_>, config: &PyRunConfig, axis: &str, values: Vec<String>, jobs: usize) -> PyResult<Vec<PyMetrics>> {
    let axis = match axis {
        "tx_powers" => SweepAxis::TxPowers,
        "densities" => SweepAxis::Densities,
        "policies" => SweepAxis::Policies,
        other => return Err(PyValueError::new_err(format!("unknown sweep axis `{other}`"))),
    };
    let cfg = config.inner.clone();
    let results = py
        .detach(move || engine::sweep(&cfg, axis, &values, jobs))
        .map_err(to_py)?;
    results
        .into_iter()
        .map(|r| r.map(|inner| PyMetrics { inner }).map_err(to_py))
        .collect()
}

#[pyfunction]
fn sinr_db(target_rx_dbm: f64, interferer_rx_dbm: Vec<f64>, noise_floor_dbm: f64) -> f64 {
    channel::sinr_db(target_rx_dbm, &interferer_rx_dbm, &NoiseConfig { noise_floor_dbm })
}

/// Pathloss of the configured model at distance `d` without shadowing.
#[pyfunction]
#[pyo3(signature = (d, config=None))]
fn pathloss_db(d: f64, config: Option<&PyRunConfig>) -> f64 {
    let model = config
        .map(|c| c.inner.channel.pathloss.clone())
        .unwrap_or_else(PathlossModel::default);
    model.pathloss_db(d)
}

/// Subchannels a message of `payload_bytes` at `mcs` occupies.
#[pyfunction]
#[pyo3(signature = (payload_bytes, mcs, config=None))]
fn subchannels_needed(payload_bytes: u32, mcs: u8, config: Option<&PyRunConfig>) -> PyResult<u32> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let profile = lookup_mcs(&cfg.mcs, mcs).map_err(to_py)?;
    let kind = MessageKind {
        payload_bytes,
        mcs,
        ..MessageKind::bsm()
    };
    core_subchannels_needed(&kind, profile, &cfg.grid).map_err(to_py)
}

/// Analytic SINR of two equal-power colliding transmitters; rows of
/// (power_dbm, position_m, sinr_db).
#[pyfunction]
#[pyo3(signature = (separation=1000.0, powers=vec![0.0, 5.0, 10.0, 15.0, 20.0], step=10.0, config=None))]
fn sinr_curve(separation: f64, powers: Vec<f64>, step: f64, config: Option<&PyRunConfig>) -> PyResult<Vec<(f64, f64, f64)>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let pathloss = PathlossModel {
        shadowing_sigma_db: 0.0,
        ..cfg.channel.pathloss
    };
    let noise = NoiseConfig {
        noise_floor_dbm: cfg.channel.noise_floor_dbm,
    };
    cv2x_core::cli::sinr_curve(&pathloss, &noise, separation, &powers, step).map_err(to_py)
}

#[pymodule]
pub fn cv2x(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyMetrics>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(sinr_db, m)?)?;
    m.add_function(wrap_pyfunction!(pathloss_db, m)?)?;
    m.add_function(wrap_pyfunction!(subchannels_needed, m)?)?;
    m.add_function(wrap_pyfunction!(sinr_curve, m)?)?;
    Ok(())
}
