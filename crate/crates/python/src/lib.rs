//! Python bindings: audio loading, the log-mel front-end, models and decisions.
//!
//! Labels cross the boundary as `int` for a target language and `None` for Other.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use slr_core::audio::{self, AudioClip, Label};
use slr_core::evalbench::{self, SynthConfig};
use slr_core::inference::{self, DEFAULT_THRESHOLD};
use slr_core::models::{self, Architecture, HeadKind, ModelConfig};
use slr_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_label(l: Option<usize>) -> Label {
    l.map_or(Label::Other, Label::Language)
}

fn from_label(l: Label) -> Option<usize> {
    match l {
        Label::Language(i) => Some(i),
        Label::Other => None,
    }
}

fn clip(samples: Vec<f32>) -> PyResult<AudioClip> {
    AudioClip::from_samples(samples).map_err(py_err)
}

/// Mono 16 kHz samples in [-1, 1].
#[pyfunction]
fn load_wav(path: PathBuf) -> PyResult<Vec<f32>> {
    Ok(audio::load_wav(path).map_err(py_err)?.into_samples())
}

/// Center pad or crop to `seconds`.
#[pyfunction]
#[pyo3(signature = (samples, seconds = 10.0))]
fn fit_to_duration(samples: Vec<f32>, seconds: f64) -> PyResult<Vec<f32>> {
    Ok(audio::fit_center(&clip(samples)?, seconds).map_err(py_err)?.into_samples())
}

/// Frames by 64 mel bins.
#[pyfunction]
fn log_mel(samples: Vec<f32>) -> PyResult<Vec<Vec<f32>>> {
    let spec = slr_core::features::log_mel(&clip(samples)?).map_err(py_err)?;
    Ok((0..spec.n_frames()).map(|t| spec.frame(t).to_vec()).collect())
}

/// Applies the head's decision rule to one activation vector.
#[pyfunction]
#[pyo3(signature = (activations, head, threshold = DEFAULT_THRESHOLD))]
fn decide(activations: Vec<f32>, head: &str, threshold: f32) -> PyResult<Option<usize>> {
    let head: HeadKind = head.parse().map_err(py_err)?;
    Ok(from_label(inference::decide(&activations, head, threshold).map_err(py_err)?.outcome))
}

/// Percentage of mismatched labels.
#[pyfunction]
fn error_rate(predictions: Vec<Option<usize>>, labels: Vec<Option<usize>>) -> PyResult<f64> {
    let p: Vec<Label> = predictions.into_iter().map(to_label).collect();
    let l: Vec<Label> = labels.into_iter().map(to_label).collect();
    evalbench::error_rate(&p, &l).map_err(py_err)
}

/// Writes a synthetic corpus and returns `{split: [(path, label)]}` plus the language names.
#[pyfunction]
#[pyo3(signature = (dir, num_target = 5, num_nontarget = 5, num_heldout = 2, per_class = 40, seed = 0))]
#[allow(clippy::type_complexity)]
fn synth_corpus(
    dir: PathBuf,
    num_target: usize,
    num_nontarget: usize,
    num_heldout: usize,
    per_class: usize,
    seed: u64,
) -> PyResult<(Vec<String>, Vec<(String, Vec<(PathBuf, Option<usize>)>)>)> {
    let cfg = SynthConfig {
        num_target,
        num_nontarget,
        num_heldout,
        per_class,
        seed,
        ..SynthConfig::default()
    };
    let c = evalbench::synth_corpus(dir, &cfg).map_err(py_err)?;
    let splits = ["train", "val", "test_closed", "test_open"]
        .into_iter()
        .map(|s| {
            let rows = c.manifest(s).unwrap().entries.iter().map(|e| (e.path.clone(), from_label(e.label))).collect();
            (s.to_string(), rows)
        })
        .collect();
    Ok((c.languages, splits))
}

/// `(name, kind, output_shape, params)`
type LayerRow = (String, String, Vec<usize>, usize);

#[pyclass(name = "Model")]
struct PyModel {
    inner: models::Model,
}

#[pymethods]
impl PyModel {
    /// A freshly initialised model.
    #[staticmethod]
    #[pyo3(signature = (architecture, num_languages, head, width = 1.0, seed = 0, languages = None))]
    fn build(
        architecture: &str,
        num_languages: usize,
        head: &str,
        width: f64,
        seed: u64,
        languages: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let arch: Architecture = architecture.parse().map_err(py_err)?;
        let head: HeadKind = head.parse().map_err(py_err)?;
        let mut cfg = ModelConfig::new(arch, num_languages, head).with_width(width).with_seed(seed);
        if let Some(l) = languages {
            cfg = cfg.with_languages(l);
        }
        Ok(Self {
            inner: models::Model::build(cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: models::load_weights(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        models::save_weights(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn architecture(&self) -> &'static str {
        self.inner.architecture().as_str()
    }

    #[getter]
    fn head(&self) -> &'static str {
        self.inner.head().as_str()
    }

    #[getter]
    fn languages(&self) -> Vec<String> {
        self.inner.config().language_names()
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    /// `(label, activations)` for one clip of any length, using sliding windows.
    #[pyo3(signature = (samples, threshold = DEFAULT_THRESHOLD))]
    fn predict(&self, samples: Vec<f32>, threshold: f32) -> PyResult<(Option<usize>, Vec<f32>)> {
        let d = inference::predict_clip(&self.inner, &clip(samples)?, threshold).map_err(py_err)?;
        Ok((from_label(d.outcome), d.activations))
    }

    /// One row per layer.
    #[pyo3(signature = (frames = 1001))]
    fn layers(&self, frames: usize) -> PyResult<Vec<LayerRow>> {
        Ok(self
            .inner
            .layers(frames)
            .map_err(py_err)?
            .into_iter()
            .map(|l| (l.name, l.kind, l.output_shape, l.params))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, head={}, languages={}, params={})",
            self.architecture(),
            self.head(),
            self.inner.config().num_languages,
            self.count_params()
        )
    }
}

#[pymodule]
fn slr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(load_wav, m)?)?;
    m.add_function(wrap_pyfunction!(fit_to_duration, m)?)?;
    m.add_function(wrap_pyfunction!(log_mel, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_class::<PyModel>()?;
    m.add("SAMPLE_RATE", slr_core::SAMPLE_RATE)?;
    Ok(())
}
