//! Python bindings: generate data, train and fine-tune models, score
//! records, compute metrics and run the journey from Python.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use anchorda::data::Day;
use anchorda::experiment::{self as exp, read_alpha_table, view_for_fraction};
use anchorda::metrics::{self, KRule, Metric, ScoredSet};
use anchorda::model::{self as model, LabeledData, ModelKind, Phase, View};
use anchorda::Error;
use ndarray::Array2;

create_exception!(anchorda_py, AnchordaError, PyException);

fn err(e: Error) -> PyErr {
    AnchordaError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> PyResult<T> {
    s.parse().map_err(|_| PyValueError::new_err(format!("unknown {what} '{s}'")))
}

fn to_array2(rows: &[Vec<f64>]) -> Result<Array2<f64>, Error> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidConfig("feature rows have different lengths".into()));
    }
    Array2::from_shape_vec((rows.len(), width), rows.concat()).map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Experiment settings: generator, training, models, fractions, seeds.
#[pyclass(name = "ExperimentConfig", module = "anchorda_py", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: exp::ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, optionally overridden by a TOML document.
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => exp::ExperimentConfig::from_toml_str(text).map_err(err)?,
            None => exp::ExperimentConfig::default(),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: exp::ExperimentConfig::load(path).map_err(err)?,
        })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(err)
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn fractions(&self) -> Vec<f64> {
        self.inner.fractions.clone()
    }

    #[getter]
    fn models(&self) -> Vec<String> {
        self.inner.models.iter().map(|m| m.to_string()).collect()
    }

    /// Training settings for one model kind.
    fn train_config(&self, kind: &str) -> PyResult<PyTrainConfig> {
        let kind: ModelKind = parse("model kind", kind)?;
        Ok(PyTrainConfig {
            inner: self.inner.train_for(kind).clone(),
        })
    }

    /// Alpha the journey would use for `kind` and `metric` without a grid search.
    fn alpha_for(&self, kind: &str, metric: &str) -> PyResult<f64> {
        Ok(self.inner.alpha_for(parse("model kind", kind)?, parse("metric", metric)?, None))
    }
}

/// Optimizer and network settings.
#[pyclass(name = "TrainConfig", module = "anchorda_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: model::TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (alpha = None, learning_rate = None, epochs = None, fine_tune_epochs = None, batch_size = None, hidden_width = None, latent_width = None, dropout = None, seed = None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        alpha: Option<f64>,
        learning_rate: Option<f64>,
        epochs: Option<usize>,
        fine_tune_epochs: Option<usize>,
        batch_size: Option<usize>,
        hidden_width: Option<usize>,
        latent_width: Option<usize>,
        dropout: Option<f64>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let mut c = model::TrainConfig::default();
        c.alpha = alpha.unwrap_or(c.alpha);
        c.learning_rate = learning_rate.unwrap_or(c.learning_rate);
        c.epochs = epochs.unwrap_or(c.epochs);
        c.fine_tune_epochs = fine_tune_epochs.unwrap_or(c.fine_tune_epochs);
        c.batch_size = batch_size.unwrap_or(c.batch_size);
        c.hidden_width = hidden_width.unwrap_or(c.hidden_width);
        c.latent_width = latent_width.unwrap_or(c.latent_width);
        c.dropout = dropout.unwrap_or(c.dropout);
        c.seed = seed.unwrap_or(c.seed);
        c.validate().map_err(err)?;
        Ok(Self { inner: c })
    }

    fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            inner: self.inner.with_alpha(alpha),
        }
    }

    fn with_seed(&self, seed: u64) -> Self {
        Self {
            inner: self.inner.with_seed(seed),
        }
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.inner.epochs
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

/// Feature rows (source view) with binary labels.
#[pyclass(name = "LabeledData", module = "anchorda_py")]
struct PyLabeledData {
    inner: LabeledData,
}

#[pymethods]
impl PyLabeledData {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.source().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn labels(&self) -> Vec<bool> {
        self.inner.labels().iter().map(|&y| y == 1.0).collect()
    }
}

/// A synthetic dataset together with its head/validation/test split.
#[pyclass(name = "Prepared", module = "anchorda_py")]
struct PyPrepared {
    inner: exp::Prepared,
}

#[pymethods]
impl PyPrepared {
    #[staticmethod]
    fn generate(py: Python<'_>, config: PyRef<'_, PyConfig>) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let inner = py.detach(|| exp::Prepared::generate(&cfg)).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: exp::Prepared::load(path).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(path).map_err(err)
    }

    #[getter]
    fn n_partners(&self) -> usize {
        self.inner.dataset.profiles.len()
    }

    #[getter]
    fn n_records(&self) -> usize {
        self.inner.dataset.records.len()
    }

    #[getter]
    fn head(&self) -> Vec<u32> {
        self.inner.split.head.clone()
    }

    #[getter]
    fn validation(&self) -> Vec<u32> {
        self.inner.split.validation.clone()
    }

    #[getter]
    fn test(&self) -> Vec<u32> {
        self.inner.split.test.clone()
    }

    /// `(category_dim, campaign_dim)`.
    #[getter]
    fn schema(&self) -> (usize, usize) {
        let s = self.inner.dataset.schema();
        (s.category_dim, s.campaign_dim)
    }

    /// Share of positive labels on `"train"` or `"eval"`.
    fn positive_rate(&self, day: &str) -> PyResult<f64> {
        let day: Day = parse("day", day)?;
        Ok(self.inner.dataset.positive_rate(day))
    }

    fn head_data(&self) -> PyResult<PyLabeledData> {
        Ok(PyLabeledData {
            inner: self.inner.head_data().map_err(err)?,
        })
    }

    /// Train-day records of the test partners sampled at `fraction`.
    fn fine_tune_data(&self, fraction: f64, seed: u64) -> PyResult<PyLabeledData> {
        Ok(PyLabeledData {
            inner: self.inner.fine_tune_data(fraction, seed).map_err(err)?,
        })
    }
}

/// A trained model with its optimizer state.
#[pyclass(name = "Checkpoint", module = "anchorda_py")]
struct PyCheckpoint {
    inner: model::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: model::Checkpoint::from_bytes(bytes).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, path).map_err(err)
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        self.inner.to_bytes().map_err(err)
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.bundle.alpha
    }

    /// Fine-tuning fraction, or `None` for a base model.
    #[getter]
    fn fraction(&self) -> Option<f64> {
        match self.inner.phase {
            Phase::Base => None,
            Phase::FineTuned { fraction } => Some(fraction),
        }
    }

    /// Continue training on `data`, resuming the stored optimizer state.
    #[pyo3(signature = (data, fraction, seed = None))]
    fn fine_tune(&self, py: Python<'_>, data: PyRef<'_, PyLabeledData>, fraction: f64, seed: Option<u64>) -> PyResult<Self> {
        let cfg = match seed {
            Some(s) => self.inner.config.with_seed(s),
            None => self.inner.config.clone(),
        };
        let data = &data.inner;
        let inner = py
            .detach(|| model::fine_tune(&self.inner, data, &cfg, fraction))
            .map_err(err)?;
        Ok(Self { inner })
    }

    /// Engagement probabilities for source-view rows, scored through
    /// `"source"` or `"target"`.
    #[pyo3(signature = (features, view = "source"))]
    fn predict(&self, features: Vec<Vec<f64>>, view: &str) -> PyResult<Vec<f64>> {
        let view = match view {
            "source" => View::Source,
            "target" => View::Target,
            other => return Err(PyValueError::new_err(format!("unknown view '{other}'"))),
        };
        let x = to_array2(&features).map_err(err)?;
        Ok(model::predict(&self.inner, x.view(), view).map_err(err)?.to_vec())
    }

    /// Macro and micro metrics on the eval day of the test (or validation)
    /// partners, through the view that matches `fraction`.
    #[pyo3(signature = (prepared, fraction = 0.0, k = None, validation = false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        prepared: PyRef<'_, PyPrepared>,
        fraction: f64,
        k: Option<usize>,
        validation: bool,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let k = k.map_or_else(KRule::default, KRule::fixed);
        k.validate().map_err(err)?;
        let prepared = &prepared.inner;
        let split = &prepared.split;
        let partners = if validation { &split.validation } else { &split.test };
        let (report, _) = py
            .detach(|| exp::evaluate_partners(&self.inner, &prepared.dataset, partners, view_for_fraction(fraction), k))
            .map_err(err)?;
        let out = pyo3::types::PyDict::new(py);
        for metric in Metric::ALL {
            out.set_item(format!("macro_{metric}"), report.macro_value(metric))?;
            out.set_item(format!("micro_{metric}"), report.micro_value(metric))?;
            out.set_item(format!("n_{metric}"), report.n_included(metric))?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!("Checkpoint(kind={}, alpha={}, phase={:?})", self.kind(), self.alpha(), self.inner.phase)
    }
}

/// Train a base model of `kind` on the head partners.
#[pyfunction]
fn train_base(
    py: Python<'_>,
    kind: &str,
    prepared: PyRef<'_, PyPrepared>,
    config: PyRef<'_, PyTrainConfig>,
) -> PyResult<PyCheckpoint> {
    let kind: ModelKind = parse("model kind", kind)?;
    let schema = prepared.inner.dataset.schema();
    let data = prepared.inner.head_data().map_err(err)?;
    let cfg = config.inner.clone();
    let inner = py.detach(|| model::train_base(kind, schema, &data, &cfg)).map_err(err)?;
    Ok(PyCheckpoint { inner })
}

/// Alpha chosen per metric (`auc`, `ndcg`, `ap`) for `kind`, trained with
/// the config's training settings.
#[pyfunction]
#[pyo3(signature = (prepared, config, kind, seed = 0))]
fn grid_search(
    py: Python<'_>,
    prepared: PyRef<'_, PyPrepared>,
    config: PyRef<'_, PyConfig>,
    kind: &str,
    seed: u64,
) -> PyResult<Vec<(String, f64)>> {
    let kind: ModelKind = parse("model kind", kind)?;
    let cfg = &config.inner;
    let prepared = &prepared.inner;
    let outcome = py
        .detach(|| {
            exp::grid_search(prepared, kind, &exp::SELECTION_METRICS, &cfg.alpha_grid, cfg.train_for(kind), cfg.k, seed)
        })
        .map_err(err)?;
    Ok(outcome.chosen.iter().map(|(m, a)| (m.to_string(), *a)).collect())
}

/// Run every cell of the journey into `out`; alpha choices are read from
/// `alpha_dir` when given. Returns the number of result rows and the failed
/// cells.
#[pyfunction]
#[pyo3(signature = (prepared, config, out, alpha_dir = None))]
fn run_journey(
    py: Python<'_>,
    prepared: PyRef<'_, PyPrepared>,
    config: PyRef<'_, PyConfig>,
    out: PathBuf,
    alpha_dir: Option<PathBuf>,
) -> PyResult<(usize, Vec<(String, String)>)> {
    let chosen = match alpha_dir {
        Some(dir) => read_alpha_table(dir).map_err(err)?,
        None => None,
    };
    let (prepared, config) = (&prepared.inner, &config.inner);
    let result = py
        .detach(|| exp::run_journey(prepared, config, chosen.as_ref(), &out))
        .map_err(err)?;
    let failures = result.failures().into_iter().map(|(k, msg)| (k.stem(), msg)).collect();
    Ok((result.rows.len(), failures))
}

/// Summarize a journey directory; returns the cold-start gains over NT as
/// `(setting, metric, model, gain_percent)`.
#[pyfunction]
fn write_report(out: PathBuf) -> PyResult<Vec<(String, String, String, Option<f64>)>> {
    let report = exp::write_report(out).map_err(err)?;
    Ok(report
        .gains
        .iter()
        .map(|g| (g.setting.as_str().to_string(), g.metric.to_string(), g.model.to_string(), g.gain_percent))
        .collect())
}

fn scored(scores: &[f64], labels: &[bool]) -> PyResult<ScoredSet> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    ScoredSet::from_parts(scores.iter().zip(labels).enumerate().map(|(i, (&s, &y))| (i as u64, 0, s, y))).map_err(err)
}

/// Area under the ROC curve; `None` without both classes.
#[pyfunction]
fn auc_roc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Option<f64>> {
    Ok(metrics::auc_roc(&scored(&scores, &labels)?))
}

/// Average precision; `None` without positives.
#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Option<f64>> {
    Ok(metrics::average_precision(&scored(&scores, &labels)?))
}

#[pyfunction]
fn ndcg_at_k(scores: Vec<f64>, labels: Vec<bool>, k: usize) -> PyResult<f64> {
    metrics::ndcg_at_k(&scored(&scores, &labels)?, k).map_err(err)
}

#[pyfunction]
fn precision_at_k(scores: Vec<f64>, labels: Vec<bool>, k: usize) -> PyResult<f64> {
    metrics::precision_at_k(&scored(&scores, &labels)?, k).map_err(err)
}

/// `(fpr, tpr)` points from (0, 0) to (1, 1).
#[pyfunction]
fn roc_points(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Option<Vec<(f64, f64)>>> {
    Ok(metrics::roc_points(&scored(&scores, &labels)?))
}

#[pymodule]
fn anchorda_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AnchordaError", m.py().get_type::<AnchordaError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyLabeledData>()?;
    m.add_class::<PyPrepared>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(train_base, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(run_journey, m)?)?;
    m.add_function(wrap_pyfunction!(write_report, m)?)?;
    m.add_function(wrap_pyfunction!(auc_roc, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(roc_points, m)?)?;
    Ok(())
}
