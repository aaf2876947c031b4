//! Python bindings. Images cross the boundary as one flat row-major list of
//! complex numbers per frame; configurations cross as JSON strings.

use std::path::PathBuf;

use mocoinr::kspace::{ComplexImage, DynamicImage};
use mocoinr::metrics::{self, Normalization};
use mocoinr::nets::{save_checkpoint, CheckpointMeta, Model};
use mocoinr::phantom::{self, KtDataset, PhantomSpec, SamplingConfig};
use mocoinr::trainer::{self, TrainConfig, TrainReport};
use mocoinr::verify::{self, Suite};
use num_complex::Complex;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type Frames = Vec<Vec<Complex<f64>>>;

fn err(e: mocoinr::Error) -> PyErr {
    match e {
        mocoinr::Error::InvalidArgument(_) | mocoinr::Error::Shape(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_frames(x: &DynamicImage<f32>) -> Frames {
    x.frames().iter().map(|f| f.data().iter().map(|z| Complex::new(z.re as f64, z.im as f64)).collect()).collect()
}

fn from_frames(frames: Frames, h: usize, w: usize) -> PyResult<DynamicImage<f32>> {
    let imgs = frames
        .into_iter()
        .map(|f| ComplexImage::new(h, w, f.into_iter().map(|z| Complex::new(z.re as f32, z.im as f32)).collect()))
        .collect::<mocoinr::Result<Vec<_>>>()
        .map_err(err)?;
    DynamicImage::new(imgs).map_err(err)
}

fn parse_normalization(s: &str) -> PyResult<Normalization> {
    if s == "ref_max" {
        return Ok(Normalization::RefMax);
    }
    match s.strip_prefix("ref_p").map(str::parse::<f64>) {
        Some(Ok(p)) if p > 0.0 && p <= 100.0 => Ok(Normalization::RefPercentile { p }),
        _ => Err(PyValueError::new_err(format!("unknown normalization {s:?}; use ref_max or ref_p<percentile>"))),
    }
}

/// Simulated or loaded k-t acquisition.
#[pyclass(name = "Dataset", module = "mocoinr")]
struct PyDataset {
    inner: KtDataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: phantom::load_dataset(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        phantom::save_dataset(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.frames, self.inner.h, self.inner.w)
    }

    #[getter]
    fn coils(&self) -> usize {
        self.inner.coil_count()
    }

    #[getter]
    fn noise_sigma(&self) -> f64 {
        self.inner.noise_sigma
    }

    fn sampling_summary(&self) -> String {
        self.inner.sampling.summary(self.inner.h, self.inner.w)
    }

    fn zero_filled(&self) -> PyResult<Frames> {
        Ok(to_frames(&self.inner.zero_filled().map_err(err)?))
    }

    /// Ground-truth frames, or `None` for measured data.
    fn ground_truth(&self) -> Option<Frames> {
        self.inner.ground_truth.as_ref().map(|g| to_frames(&g.images))
    }

    /// Cardiac region mask, flat row-major.
    fn roi(&self) -> Option<Vec<bool>> {
        self.inner.ground_truth.as_ref().map(|g| g.roi.clone())
    }

    fn __repr__(&self) -> String {
        format!("Dataset({}x{}, {} frames, {} coils)", self.inner.h, self.inner.w, self.inner.frames, self.inner.coil_count())
    }
}

/// Simulates the cardiac phantom. `sampling` is JSON such as
/// `{"kind": "vista", "af": 8}` or `{"kind": "radial", "spokes_per_frame": 8}`.
#[pyfunction]
#[pyo3(signature = (height, width, frames, sampling, coils=4, noise_sigma=0.0, seed=0, static_heart=false))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    height: usize,
    width: usize,
    frames: usize,
    sampling: &str,
    coils: usize,
    noise_sigma: f64,
    seed: u64,
    static_heart: bool,
) -> PyResult<PyDataset> {
    let sampling: SamplingConfig = serde_json::from_str(sampling).map_err(json_err)?;
    let mut spec = PhantomSpec::desk(height, width, frames);
    if static_heart {
        spec.motion.alpha = 0.0;
    }
    let inner = phantom::simulate(&spec, &sampling, coils, noise_sigma, seed).map_err(err)?;
    Ok(PyDataset { inner })
}

/// Training configuration preset as JSON: `"desk"` or `"paper"`.
#[pyfunction]
#[pyo3(signature = (preset="desk"))]
fn train_config(preset: &str) -> PyResult<String> {
    let cfg = match preset {
        "desk" => TrainConfig::desk(),
        "paper" => TrainConfig::paper(),
        _ => return Err(PyValueError::new_err(format!("unknown preset {preset:?}"))),
    };
    serde_json::to_string_pretty(&cfg).map_err(json_err)
}

/// Trained model with its iteration report.
#[pyclass(name = "Fit", module = "mocoinr")]
struct PyFit {
    model: Model<f32>,
    report: TrainReport,
    config: TrainConfig,
    shape: (usize, usize, usize),
}

#[pymethods]
impl PyFit {
    #[getter]
    fn diverged(&self) -> bool {
        self.report.diverged()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.report.records.len()
    }

    /// `(psnr, ssim, nrmse_roi)` when the dataset carried ground truth.
    #[getter]
    fn final_metrics(&self) -> Option<(f64, f64, f64)> {
        self.report.final_metrics.map(|m| (m.psnr, m.ssim, m.nrmse_roi))
    }

    fn losses(&self) -> Vec<f64> {
        self.report.records.iter().map(|r| r.loss).collect()
    }

    fn report_csv(&self) -> String {
        self.report.to_csv()
    }

    /// Reconstructed frames, displacement fields in pixels (per frame,
    /// flat `(ux, uy)` pairs), and the canonical image.
    fn reconstruct(&self, py: Python<'_>) -> PyResult<(Frames, Vec<Vec<(f64, f64)>>, Vec<Complex<f64>>)> {
        let (frames, h, w) = self.shape;
        let windows = self.config.final_windows(&self.config.effective_model());
        let rec = py.detach(|| trainer::reconstruct(&self.model, h, w, frames, windows)).map_err(err)?;
        let dvfs = rec.dvfs.iter().map(|u| (0..h * w).map(|s| u.vector_px(s)).map(|[x, y]| (x, y)).collect()).collect();
        let canonical = rec.canonical.data().iter().map(|z| Complex::new(z.re as f64, z.im as f64)).collect();
        Ok((to_frames(&rec.images), dvfs, canonical))
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        let meta = CheckpointMeta { iteration: self.report.records.len(), seed: self.config.seed };
        save_checkpoint(&path, &self.model, &meta).map_err(err)
    }
}

/// Trains on `dataset`. `config` is a JSON training configuration (see
/// [`train_config`]); `iters` and `seed` override it.
#[pyfunction]
#[pyo3(signature = (dataset, config=None, iters=None, seed=None))]
fn fit(py: Python<'_>, dataset: &PyDataset, config: Option<&str>, iters: Option<usize>, seed: Option<u64>) -> PyResult<PyFit> {
    let mut cfg = match config {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => TrainConfig::desk(),
    };
    if let Some(n) = iters {
        cfg.total_iters = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = &dataset.inner;
    let f = py.detach(|| trainer::fit(ds, &cfg)).map_err(err)?;
    Ok(PyFit { model: f.model, report: f.report, config: cfg, shape: (ds.frames, ds.h, ds.w) })
}

/// `(psnr, ssim, nrmse_roi)` of `test` against `reference`.
#[pyfunction]
#[pyo3(signature = (reference, test, height, width, roi, normalization="ref_max"))]
fn evaluate(
    reference: Frames,
    test: Frames,
    height: usize,
    width: usize,
    roi: Vec<bool>,
    normalization: &str,
) -> PyResult<(f64, f64, f64)> {
    let norm = parse_normalization(normalization)?;
    let r = from_frames(reference, height, width)?;
    let t = from_frames(test, height, width)?;
    let m = metrics::evaluate(&r, &t, &roi, norm).map_err(err)?;
    Ok((m.psnr, m.ssim, m.nrmse_roi))
}

/// Runs a self-check suite; one `(suite, check, error, tolerance, passed)`
/// tuple per check.
#[pyfunction]
#[pyo3(signature = (suite="all"))]
fn run_verify(py: Python<'_>, suite: &str) -> PyResult<Vec<(String, String, f64, f64, bool)>> {
    let suite: Suite = suite.parse().map_err(err)?;
    let checks = py.detach(|| verify::run(suite)).map_err(err)?;
    Ok(checks.into_iter().map(|c| (c.suite.name().to_string(), c.name.clone(), c.error, c.tolerance, c.passed())).collect())
}

#[pymodule(name = "mocoinr")]
fn mocoinr_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train_config, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
