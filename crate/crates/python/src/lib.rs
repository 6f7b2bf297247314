//! Python bindings: configuration, evaluation reports, BTL fits, the log-mel
//! frontend and the file-based training commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ocean_fusion::btl::{self, BtlOptions};
use ocean_fusion::fusion::SourceCheckpoint;
use ocean_fusion::pipeline::{self, Dataset, FrontendConfig, LoadedModel, REFERENCE_SCORES};
use ocean_fusion::preprocess::{compute_log_mel, LogMelConfig};
use ocean_fusion::subnets::Modality;
use ocean_fusion::{Error, Split, TraitVector};

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyArithmeticError::new_err(e.to_string()),
        _ if matches!(e, Error::Io { .. }) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for ocean_fusion::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
pub struct PyTrainConfig {
    inner: pipeline::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    /// Parses a flat TOML document; empty text gives the defaults.
    #[new]
    #[pyo3(signature = (toml = ""))]
    fn new(toml: &str) -> PyResult<Self> {
        Ok(PyTrainConfig {
            inner: pipeline::TrainConfig::parse(toml).py()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn learning_rate(&self, modality: &str) -> PyResult<f64> {
        Ok(self.inner.learning_rate(modality.parse::<Modality>().py()?))
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.inner.max_steps
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn batch_videos(&self) -> usize {
        self.inner.batch_videos
    }

    #[getter]
    fn frames_per_video(&self) -> usize {
        self.inner.frames_per_video
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig(stage={}, max_steps={}, seed={})", self.inner.stage, self.inner.max_steps, self.inner.seed)
    }
}

#[pyclass(name = "EvaluationReport", from_py_object)]
#[derive(Clone)]
pub struct PyEvaluationReport {
    inner: ocean_fusion::EvaluationReport,
}

#[pymethods]
impl PyEvaluationReport {
    /// Report from per-video five-trait truths and predictions in `[0, 1]`.
    #[staticmethod]
    fn from_pairs(truth: Vec<[f64; 5]>, pred: Vec<[f64; 5]>) -> PyResult<Self> {
        if truth.len() != pred.len() {
            return Err(PyValueError::new_err(format!("{} truths for {} predictions", truth.len(), pred.len())));
        }
        let t: Vec<TraitVector> = truth.into_iter().map(TraitVector::new).collect::<ocean_fusion::Result<_>>().py()?;
        let p: Vec<TraitVector> = pred.into_iter().map(TraitVector::new).collect::<ocean_fusion::Result<_>>().py()?;
        Ok(PyEvaluationReport {
            inner: ocean_fusion::EvaluationReport::from_pairs(t.iter().zip(&p)).py()?,
        })
    }

    #[getter]
    fn per_trait_accuracy(&self) -> [f64; 5] {
        self.inner.per_trait_accuracy
    }

    #[getter]
    fn mean_accuracy(&self) -> f64 {
        self.inner.mean_accuracy
    }

    #[getter]
    fn n_videos(&self) -> usize {
        self.inner.n_videos
    }

    #[getter]
    fn split(&self) -> String {
        self.inner.split.clone()
    }

    /// This report beside the published reference scores.
    fn comparison_table(&self) -> String {
        pipeline::emit_comparison_table(&self.inner, &REFERENCE_SCORES)
    }

    fn __repr__(&self) -> String {
        format!("EvaluationReport(mean_accuracy={:.6}, n_videos={})", self.inner.mean_accuracy, self.inner.n_videos)
    }
}

#[pyclass(name = "BtlFit", skip_from_py_object)]
pub struct PyBtlFit {
    inner: btl::BtlFit,
}

#[pymethods]
impl PyBtlFit {
    #[getter]
    fn trait_name(&self) -> &'static str {
        self.inner.trait_.name()
    }

    #[getter]
    fn strengths(&self) -> BTreeMap<String, f64> {
        self.inner.strengths.clone()
    }

    #[getter]
    fn normalized_scores(&self) -> BTreeMap<String, f64> {
        self.inner.normalized_scores.clone()
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.inner.log_likelihood
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }
}

/// Fits every trait in a line-delimited comparisons document.
#[pyfunction]
#[pyo3(signature = (comparisons_jsonl, regularize = true))]
fn fit_btl(comparisons_jsonl: &str, regularize: bool) -> PyResult<Vec<PyBtlFit>> {
    let cs = btl::parse_comparisons(comparisons_jsonl).py()?;
    let opts = BtlOptions {
        regularize,
        ..Default::default()
    };
    Ok(btl::fit_all_traits(&cs, &opts)
        .py()?
        .into_values()
        .map(|inner| PyBtlFit { inner })
        .collect())
}

/// Log-mel patches (each 96 frames x 64 bands, flattened row-major).
#[pyfunction]
fn log_mel_patches(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    Ok(compute_log_mel(&samples, sample_rate, &LogMelConfig::default()).py()?.patches)
}

/// Writes a synthetic dataset; returns the manifest path.
#[pyfunction]
fn generate_synthetic_dataset(n: usize, seed: u64, out: PathBuf) -> PyResult<PathBuf> {
    Ok(pipeline::generate_synthetic_dataset(n, seed, &out).py()?.manifest_path)
}

fn dataset(manifest: &Path, cfg: &pipeline::TrainConfig, cache: Option<&Path>) -> PyResult<Dataset> {
    let ds = Dataset::open(manifest, FrontendConfig::from(cfg)).py()?;
    Ok(match cache {
        Some(c) => ds.with_cache_dir(c),
        None => ds,
    })
}

/// Trains one modality and saves the checkpoint; returns `(sha256, final train accuracy)`.
#[pyfunction]
#[pyo3(signature = (modality, manifest, out, config = None, cache = None))]
fn train_stage1(modality: &str, manifest: PathBuf, out: PathBuf, config: Option<PyTrainConfig>, cache: Option<PathBuf>) -> PyResult<(String, Option<f64>)> {
    let m: Modality = modality.parse().py()?;
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let ds = dataset(&manifest, &cfg, cache.as_deref())?;
    let ck = pipeline::train_stage1(m, &ds, &cfg).py()?;
    Ok((ck.save(&out).py()?, ck.meta.final_train_accuracy))
}

/// Fuses four stage-1 checkpoints and fine-tunes; returns `(sha256, final train accuracy)`.
#[pyfunction]
#[pyo3(signature = (checkpoints, manifest, out, config = None, cache = None))]
fn train_stage2(checkpoints: Vec<PathBuf>, manifest: PathBuf, out: PathBuf, config: Option<PyTrainConfig>, cache: Option<PathBuf>) -> PyResult<(String, Option<f64>)> {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let sources: Vec<SourceCheckpoint> = checkpoints.iter().map(|p| SourceCheckpoint::load(p)).collect::<ocean_fusion::Result<_>>().py()?;
    let ds = dataset(&manifest, &cfg, cache.as_deref())?;
    let ck = pipeline::run_stage2(&sources, &ds, &cfg).py()?;
    Ok((ck.save(&out).py()?, ck.meta.final_train_accuracy))
}

/// Mean accuracy of a saved checkpoint on one split.
#[pyfunction]
#[pyo3(signature = (checkpoint, manifest, split, config = None, cache = None))]
fn evaluate(checkpoint: PathBuf, manifest: PathBuf, split: &str, config: Option<PyTrainConfig>, cache: Option<PathBuf>) -> PyResult<PyEvaluationReport> {
    let split: Split = split.parse().py()?;
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let model = LoadedModel::load(&checkpoint).py()?;
    let ds = dataset(&manifest, &cfg, cache.as_deref())?;
    Ok(PyEvaluationReport {
        inner: pipeline::evaluate(model.predictor(), &ds, split, cfg.frames_per_video).py()?,
    })
}

#[pymodule]
fn ocean_fusion_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyEvaluationReport>()?;
    m.add_class::<PyBtlFit>()?;
    m.add_function(wrap_pyfunction!(fit_btl, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel_patches, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_stage1, m)?)?;
    m.add_function(wrap_pyfunction!(train_stage2, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("PROPOSED_REFERENCE_MEAN", pipeline::reference::METHOD_ROWS[5].mean)?;
    Ok(())
}
