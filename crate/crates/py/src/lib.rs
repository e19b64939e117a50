//! Python bindings for `fibersr`.
//!
//! Images cross the boundary as row-major lists of floats in `[0, 1]`.
//! Long-running calls release the interpreter lock.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use fibersr::degrade::{degrade as degrade_image, DegradationConfig};
use fibersr::image::{load_pgm, save_pgm, Image, PgmDepth};
use fibersr::metrics::{psnr as psnr_of, ssim as ssim_of, SsimConfig};
use fibersr::phantom::{generate_phantom, PhantomSpec};
use fibersr::preprocess::{preprocess as preprocess_image, PreprocessConfig};
use fibersr::readerstats::{
    equivalence_sample_size as sample_size, parse_reads, summarize, unpaired_t_test_with, Confidence, Filter,
    Modality, TTestKind,
};
use fibersr::srcnn::{infer, load_weights, save_weights, ModelShape, SrcnnModel, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Image", module = "fibersr_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyImage {
    inner: Image,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<f64>) -> PyResult<Self> {
        Image::new(width, height, data).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, value: f64) -> PyResult<Self> {
        Image::filled(width, height, value).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_pgm(data: &[u8]) -> PyResult<Self> {
        load_pgm(data).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_pgm(&bytes)
    }

    /// Binary PGM with 8 or 16 bits per sample.
    #[pyo3(signature = (bits = 16))]
    fn to_pgm<'py>(&self, py: Python<'py>, bits: u32) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &save_pgm(&self.inner, depth(bits)?)))
    }

    #[pyo3(signature = (path, bits = 16))]
    fn save(&self, path: &str, bits: u32) -> PyResult<()> {
        std::fs::write(path, save_pgm(&self.inner, depth(bits)?)).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.inner.height() || col >= self.inner.width() {
            return Err(PyValueError::new_err(format!("({row}, {col}) is outside the image")));
        }
        Ok(self.inner.get(row, col))
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

fn depth(bits: u32) -> PyResult<PgmDepth> {
    match bits {
        8 => Ok(PgmDepth::Eight),
        16 => Ok(PgmDepth::Sixteen),
        _ => Err(PyValueError::new_err("bits must be 8 or 16")),
    }
}

/// A synthetic nuclei phantom; `kind` is "neoplastic" or "non_neoplastic".
#[pyfunction]
#[pyo3(signature = (kind, width = 1280, height = 960, seed = 0))]
fn phantom(kind: &str, width: usize, height: usize, seed: u64) -> PyResult<PyImage> {
    let spec = match kind {
        "neoplastic" => PhantomSpec::neoplastic(width, height),
        "non_neoplastic" => PhantomSpec::non_neoplastic(width, height),
        other => return Err(PyValueError::new_err(format!("unknown phantom kind {other:?}"))),
    };
    generate_phantom(&spec, seed).map(|p| PyImage { inner: p.image }).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (image, sigma = 2.0, clip = 0.005, tiles = (8, 8), bins = 256))]
fn preprocess(image: &PyImage, sigma: f64, clip: f64, tiles: (usize, usize), bins: usize) -> PyResult<PyImage> {
    let cfg = PreprocessConfig {
        gaussian_sigma_px: sigma,
        clahe_clip_limit: clip,
        clahe_tiles: tiles,
        clahe_bins: bins,
    };
    preprocess_image(&image.inner, &cfg).map(|inner| PyImage { inner }).map_err(value_err)
}

/// Returns `(lr, sparse, samples)`; each sample is a dict with the tile
/// index, ROI origin, drawn offset and mean.
#[pyfunction]
#[pyo3(signature = (image, m, s, d = 0.0, seed = 0, pixel_size = 2.0))]
fn degrade(
    image: &PyImage,
    m: f64,
    s: f64,
    d: f64,
    seed: u64,
    pixel_size: f64,
) -> PyResult<(PyImage, PyImage, Vec<HashMap<&'static str, f64>>)> {
    let cfg = DegradationConfig {
        pixel_size_um: pixel_size,
        ..DegradationConfig::new(m, s, d)
    }
    .with_seed(seed);
    let pair = degrade_image(&image.inner, &cfg).map_err(value_err)?;
    let samples = pair
        .samples
        .iter()
        .map(|x| {
            HashMap::from([
                ("tile_row", x.tile_index.0 as f64),
                ("tile_col", x.tile_index.1 as f64),
                ("roi_row", x.roi_origin.0 as f64),
                ("roi_col", x.roi_origin.1 as f64),
                ("dy", x.offset.0 as f64),
                ("dx", x.offset.1 as f64),
                ("mean", x.mean_value),
            ])
        })
        .collect();
    Ok((PyImage { inner: pair.lr }, PyImage { inner: pair.sparse }, samples))
}

/// PSNR in dB; `inf` for identical images.
#[pyfunction]
#[pyo3(signature = (reference, test, peak = 1.0))]
fn psnr(reference: &PyImage, test: &PyImage, peak: f64) -> PyResult<f64> {
    psnr_of(&reference.inner, &test.inner, peak).map(|p| p.value()).map_err(value_err)
}

#[pyfunction]
fn ssim(reference: &PyImage, test: &PyImage) -> PyResult<f64> {
    ssim_of(&reference.inner, &test.inner, &SsimConfig::default()).map_err(value_err)
}

#[pyclass(name = "Model", module = "fibersr_py", frozen)]
pub struct PyModel {
    inner: SrcnnModel<f32>,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized 9-1-5 network with 64 and 32 filters.
    #[new]
    #[pyo3(signature = (seed = 0, init_std = 1e-3, lrelu_slope = 0.01))]
    fn new(seed: u64, init_std: f64, lrelu_slope: f64) -> PyResult<Self> {
        SrcnnModel::init(ModelShape::default(), lrelu_slope, init_std, seed)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        load_weights(data).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_bytes(&bytes)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &save_weights(&self.inner))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, save_weights(&self.inner)).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Super-resolves one frame; the output is clamped to `[0, 1]`.
    fn infer(&self, py: Python<'_>, image: &PyImage) -> PyImage {
        let lr = image.inner.clone();
        PyImage {
            inner: py.detach(|| infer(&self.inner, &lr)),
        }
    }
}

/// Trains on `(lr, hr)` pairs. Returns `(model, best_epoch, history)` where
/// history rows are `(epoch, train_mse, val_mse)`.
#[pyfunction]
#[pyo3(signature = (train_pairs, val_pairs, epochs = 200, patch_size = 64, patches_per_image = 10, batch_size = 8, learning_rate = 1e-4, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    train_pairs: Vec<(PyImage, PyImage)>,
    val_pairs: Vec<(PyImage, PyImage)>,
    epochs: usize,
    patch_size: usize,
    patches_per_image: usize,
    batch_size: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<(PyModel, usize, Vec<(usize, Option<f64>, Option<f64>)>)> {
    let cfg = TrainConfig {
        epochs,
        patch_size,
        patches_per_image,
        batch_size,
        learning_rate,
        seed,
        ..TrainConfig::default()
    };
    let unwrap = |v: Vec<(PyImage, PyImage)>| -> Vec<(Image, Image)> { v.into_iter().map(|(a, b)| (a.inner, b.inner)).collect() };
    let (tr, va) = (unwrap(train_pairs), unwrap(val_pairs));
    let outcome = py.detach(|| fibersr::srcnn::train(&tr, &va, &cfg)).map_err(value_err)?;
    let history = outcome.history.iter().map(|r| (r.epoch, r.train_mse, r.val_mse)).collect();
    Ok((PyModel { inner: outcome.model }, outcome.best_epoch, history))
}

/// Confusion counts and rates for reads in CSV text, filtered by modality
/// ("HR" or "SR") and optionally confidence and reader.
#[pyfunction]
#[pyo3(signature = (csv_text, modality, confidence = None, reader = None))]
fn summarize_reads(
    csv_text: &str,
    modality: &str,
    confidence: Option<&str>,
    reader: Option<&str>,
) -> PyResult<HashMap<&'static str, Option<f64>>> {
    let records = parse_reads(csv_text.as_bytes()).map_err(value_err)?;
    let modality: Modality = modality.parse().map_err(value_err)?;
    let confidence: Option<Confidence> = confidence.map(str::parse).transpose().map_err(value_err)?;
    let mut filter = Filter::modality(modality).with_confidence(confidence);
    if let Some(r) = reader {
        filter = filter.with_reader(r);
    }
    let s = summarize(&records, &filter).map_err(value_err)?;
    Ok(HashMap::from([
        ("tp", Some(s.tp as f64)),
        ("fp", Some(s.fp as f64)),
        ("fn", Some(s.fn_ as f64)),
        ("tn", Some(s.tn as f64)),
        ("sensitivity", s.sensitivity),
        ("specificity", s.specificity),
        ("accuracy", Some(s.accuracy)),
        ("prevalence", Some(s.prevalence())),
    ]))
}

/// Two-sided unpaired t-test; returns `(t, df, p)`.
#[pyfunction]
#[pyo3(signature = (a, b, welch = false))]
fn t_test(a: Vec<f64>, b: Vec<f64>, welch: bool) -> PyResult<(f64, f64, f64)> {
    let kind = if welch { TTestKind::Welch } else { TTestKind::Pooled };
    unpaired_t_test_with(&a, &b, kind).map(|t| (t.t, t.df, t.p)).map_err(value_err)
}

/// Per-arm sample size for a TOST equivalence test on two proportions.
#[pyfunction]
#[pyo3(signature = (p, power = 0.8, alpha = 0.05, limit = 0.15))]
fn equivalence_sample_size(p: f64, power: f64, alpha: f64, limit: f64) -> PyResult<u64> {
    sample_size(power, alpha, limit, p).map_err(value_err)
}

#[pymodule]
fn fibersr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(summarize_reads, m)?)?;
    m.add_function(wrap_pyfunction!(t_test, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence_sample_size, m)?)?;
    Ok(())
}
