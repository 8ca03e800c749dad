//! Python bindings for cuefuse.
//!
//! Distributions are exposed as an immutable `EmotionDistribution` class;
//! labels travel as lowercase strings ("joy", ..., "sad") and outcomes as
//! "CC", "DC", "CD", "DD".

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cuefuse::context::{self, ParseError};
use cuefuse::distributions::{EmotionDistribution, EmotionLabel, NUM_LABELS};
use cuefuse::facesources::{self, FrameKind, FrameSeries};
use cuefuse::fusion::{self, BandTable, FusionConfig};
use cuefuse::metrics::{self, KldDirection, KLD_EPS};
use cuefuse::pipeline::{LoadedConfig, Pipeline, Stage};
use cuefuse::GameOutcome;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn label(s: &str) -> PyResult<EmotionLabel> {
    s.parse().map_err(|_| PyValueError::new_err(format!("unknown emotion label {s:?}")))
}

fn outcome(s: &str) -> PyResult<GameOutcome> {
    s.parse().map_err(|_| PyValueError::new_err(format!("unknown game outcome {s:?}")))
}

fn array7(values: Vec<f64>) -> PyResult<[f64; NUM_LABELS]> {
    let n = values.len();
    values
        .try_into()
        .map_err(|_| PyValueError::new_err(format!("expected {NUM_LABELS} values, got {n}")))
}

/// Probability distribution over the seven emotion labels.
#[pyclass(name = "EmotionDistribution", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyDistribution {
    inner: EmotionDistribution,
}

impl From<EmotionDistribution> for PyDistribution {
    fn from(inner: EmotionDistribution) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyDistribution {
    /// From seven probabilities in label order, or a dict keyed by label.
    /// Sums within 0.02 of 1 are renormalized.
    #[new]
    fn new(probs: &Bound<'_, PyAny>) -> PyResult<Self> {
        let raw = if let Ok(map) = probs.extract::<BTreeMap<String, f64>>() {
            if map.len() != NUM_LABELS {
                return Err(PyValueError::new_err("dict must have exactly the seven labels"));
            }
            let mut raw = [0.0; NUM_LABELS];
            for (k, v) in map {
                raw[label(&k)?.index()] = v;
            }
            raw
        } else {
            array7(probs.extract::<Vec<f64>>()?)?
        };
        EmotionDistribution::from_probs_tolerant(&raw).map(Self::from).map_err(value_err)
    }

    #[staticmethod]
    fn uniform() -> Self {
        EmotionDistribution::uniform().into()
    }

    #[staticmethod]
    fn point_mass(label_name: &str) -> PyResult<Self> {
        Ok(EmotionDistribution::point_mass(label(label_name)?).into())
    }

    /// Relative frequencies of seven non-negative counts.
    #[staticmethod]
    fn from_counts(counts: Vec<u64>) -> PyResult<Self> {
        let n = counts.len();
        let counts: [u64; NUM_LABELS] = counts
            .try_into()
            .map_err(|_| PyValueError::new_err(format!("expected {NUM_LABELS} counts, got {n}")))?;
        EmotionDistribution::from_counts(&counts).map(Self::from).map_err(value_err)
    }

    /// Rescales any non-negative vector with a positive sum.
    #[staticmethod]
    fn normalize(values: Vec<f64>) -> PyResult<Self> {
        EmotionDistribution::normalize(&array7(values)?).map(Self::from).map_err(value_err)
    }

    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn to_dict(&self) -> BTreeMap<&'static str, f64> {
        EmotionLabel::ALL
            .iter()
            .map(|l| (l.as_str(), self.inner.get(*l)))
            .collect()
    }

    fn __getitem__(&self, label_name: &str) -> PyResult<f64> {
        Ok(self.inner.get(label(label_name)?))
    }

    /// Most probable label; ties go to the earlier label.
    fn argmax(&self) -> &'static str {
        self.inner.argmax().as_str()
    }

    fn smooth(&self, eps: f64) -> PyResult<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(PyValueError::new_err("eps must be positive"));
        }
        Ok(self.inner.smooth(eps).into())
    }

    fn __len__(&self) -> usize {
        NUM_LABELS
    }

    fn __repr__(&self) -> String {
        let parts: Vec<String> = EmotionLabel::ALL
            .iter()
            .map(|l| format!("{}={:.4}", l.as_str(), self.inner.get(*l)))
            .collect();
        format!("EmotionDistribution({})", parts.join(", "))
    }
}

/// Normalized product of face and context distributions, optionally
/// divided by a prior.
#[pyfunction]
#[pyo3(signature = (face, context, eps_floor = 1e-6, prior = None))]
fn bci_fuse(
    face: &PyDistribution,
    context: &PyDistribution,
    eps_floor: f64,
    prior: Option<&PyDistribution>,
) -> PyResult<PyDistribution> {
    let cfg = FusionConfig {
        eps_floor,
        use_prior: prior.is_some(),
        prior: prior.map(|p| p.inner),
    };
    fusion::bci_fuse(&face.inner, &context.inner, &cfg)
        .map(PyDistribution::from)
        .map_err(value_err)
}

/// Prose description of a face distribution using the default bands.
#[pyfunction]
fn describe_face(face: &PyDistribution) -> PyResult<String> {
    fusion::describe_distribution_nl(&face.inner, &BandTable::default()).map_err(value_err)
}

fn direction(name: &str) -> PyResult<KldDirection> {
    match name {
        "truth_pred" => Ok(KldDirection::TruthPred),
        "pred_truth" => Ok(KldDirection::PredTruth),
        _ => Err(PyValueError::new_err("direction must be 'truth_pred' or 'pred_truth'")),
    }
}

/// KL divergence in nats, smoothed by 1e-10.
#[pyfunction]
#[pyo3(signature = (truth, pred, direction = "truth_pred"))]
fn kld(truth: &PyDistribution, pred: &PyDistribution, direction: &str) -> PyResult<f64> {
    Ok(match self::direction(direction)? {
        KldDirection::TruthPred => metrics::kld(&truth.inner, &pred.inner, KLD_EPS),
        KldDirection::PredTruth => metrics::kld(&pred.inner, &truth.inner, KLD_EPS),
    })
}

#[pyfunction]
fn rmse(truth: &PyDistribution, pred: &PyDistribution) -> f64 {
    metrics::rmse(&truth.inner, &pred.inner)
}

/// Support-weighted mean of per-class F1 over label strings.
#[pyfunction]
fn weighted_f1(pred: Vec<String>, truth: Vec<String>) -> PyResult<f64> {
    let pred = pred.iter().map(|s| label(s)).collect::<PyResult<Vec<_>>>()?;
    let truth = truth.iter().map(|s| label(s)).collect::<PyResult<Vec<_>>>()?;
    metrics::weighted_f1(&pred, &truth).map_err(value_err)
}

fn series(frames: Vec<Vec<f64>>, kind: FrameKind) -> PyResult<FrameSeries> {
    let frames = frames.into_iter().map(array7).collect::<PyResult<Vec<_>>>()?;
    FrameSeries::new("python", kind, frames).map_err(value_err)
}

/// Evidence frames in [-4, 4] -> (distribution, degenerate flag).
#[pyfunction]
fn facet_to_distribution(frames: Vec<Vec<f64>>) -> PyResult<(PyDistribution, bool)> {
    let est = facesources::facet_to_distribution(&series(frames, FrameKind::Evidence)?).map_err(value_err)?;
    Ok((est.dist.into(), est.degenerate))
}

/// Per-frame probability vectors -> their renormalized mean.
#[pyfunction]
fn softmax_frames_to_distribution(frames: Vec<Vec<f64>>) -> PyResult<PyDistribution> {
    facesources::softmax_frames_to_distribution(&series(frames, FrameKind::Probabilities)?)
        .map(PyDistribution::from)
        .map_err(value_err)
}

#[pyfunction]
fn build_prompt(game_outcome: &str) -> PyResult<String> {
    Ok(context::build_prompt(outcome(game_outcome)?))
}

#[pyfunction]
fn build_integration_prompt(game_outcome: &str, face: &PyDistribution) -> PyResult<String> {
    context::build_integration_prompt(outcome(game_outcome)?, &face.inner, &BandTable::default()).map_err(value_err)
}

#[pyfunction]
fn parse_llm_distribution(text: &str) -> PyResult<PyDistribution> {
    context::parse_llm_distribution(text)
        .map(PyDistribution::from)
        .map_err(|e: ParseError| value_err(e))
}

#[pyfunction]
fn format_answer(dist: &PyDistribution) -> String {
    context::format_answer(&dist.inner)
}

/// Runs pipeline stages for a config file. `stages` defaults to all.
#[pyfunction]
#[pyo3(signature = (config, offline = true, stages = None))]
fn run_pipeline(py: Python<'_>, config: PathBuf, offline: bool, stages: Option<Vec<String>>) -> PyResult<String> {
    let stages = match stages {
        None => Stage::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| {
                Stage::ALL
                    .iter()
                    .copied()
                    .find(|s| s.name() == n)
                    .ok_or_else(|| PyValueError::new_err(format!("unknown stage {n:?}")))
            })
            .collect::<PyResult<Vec<_>>>()?,
    };
    py.detach(|| {
        let cfg = LoadedConfig::load(&config)?;
        let pipeline = Pipeline::new(cfg, offline);
        pipeline.run(&stages)?;
        Ok(pipeline.output_dir().display().to_string())
    })
    .map_err(|e: cuefuse::pipeline::PipelineError| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pycuefuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LABELS", EmotionLabel::ALL.map(|l| l.as_str()).to_vec())?;
    m.add("OUTCOMES", GameOutcome::ALL.map(|o| o.as_str()).to_vec())?;
    m.add_class::<PyDistribution>()?;
    m.add_function(wrap_pyfunction!(bci_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(describe_face, m)?)?;
    m.add_function(wrap_pyfunction!(kld, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    m.add_function(wrap_pyfunction!(facet_to_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_frames_to_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_integration_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_llm_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(format_answer, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
