//! Python bindings: run pipeline stages, query a suggester, compute metrics.

use std::path::PathBuf;

use dualreply::config::{derive_seed as derive, RunConfig};
use dualreply::corpus::{Role, Turn};
use dualreply::eval::{self, ScoredPair};
use dualreply::pipeline::{self, RunDir};
use dualreply::serve::{SuggestRequest, Suggester as Inner};
use dualreply::whitelist::WhitelistMethod;
use dualreply::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts a serializable value to Python objects through `json.loads`.
fn to_object<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_method(method: &str) -> PyResult<WhitelistMethod> {
    match method {
        "frequency" | "freq" => Ok(WhitelistMethod::Frequency),
        "clustering" | "cluster" => Ok(WhitelistMethod::Clustering),
        other => Err(PyValueError::new_err(format!("unknown whitelist method {other:?}"))),
    }
}

/// A run directory plus its configuration.
#[pyclass]
struct Run {
    dir: RunDir,
    config: RunConfig,
}

#[pymethods]
impl Run {
    /// Opens `path`, reading `config` (a JSON file) or `<path>/config.json`
    /// when present, otherwise the defaults.
    #[new]
    #[pyo3(signature = (path, config=None, seed=None))]
    fn new(path: PathBuf, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        let default_path = path.join("config.json");
        let source = config.or_else(|| default_path.exists().then_some(default_path.clone()));
        let mut cfg = match &source {
            Some(p) => RunConfig::load(p).map_err(to_py)?,
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
            cfg.derive_stage_seeds();
        }
        cfg.validate().map_err(to_py)?;
        std::fs::create_dir_all(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        if !default_path.exists() {
            std::fs::write(&default_path, cfg.to_json() + "\n")
                .map_err(|e| PyOSError::new_err(format!("{}: {e}", default_path.display())))?;
        }
        Ok(Run {
            dir: RunDir::new(path),
            config: cfg,
        })
    }

    #[getter]
    fn path(&self) -> PathBuf {
        self.dir.root().to_path_buf()
    }

    /// The resolved configuration as a dict.
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.config)
    }

    fn synth_data(&self, py: Python<'_>) -> PyResult<PathBuf> {
        py.detach(|| pipeline::synth_stage(&self.dir, &self.config)).map_err(to_py)
    }

    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let s = py.detach(|| pipeline::stats_stage(&self.dir, &self.config)).map_err(to_py)?;
        to_object(py, &s)
    }

    fn split(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let s = py.detach(|| pipeline::split_stage(&self.dir, &self.config)).map_err(to_py)?;
        to_object(py, &s)
    }

    fn train(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let r = py.detach(|| pipeline::train_stage(&self.dir, &self.config)).map_err(to_py)?;
        to_object(py, &r)
    }

    /// Builds a whitelist; `method` is "frequency" or "clustering".
    /// Returns its id, e.g. "frequency-500".
    fn whitelist(&self, py: Python<'_>, method: &str, size: usize) -> PyResult<String> {
        let m = parse_method(method)?;
        let wl = py
            .detach(|| pipeline::whitelist_stage(&self.dir, &self.config, m, size))
            .map_err(to_py)?;
        Ok(wl.id())
    }

    #[pyo3(signature = (checkpoint=None))]
    fn eval(&self, py: Python<'_>, checkpoint: Option<PathBuf>) -> PyResult<Py<PyAny>> {
        let r = py
            .detach(|| pipeline::eval_stage(&self.dir, &self.config, checkpoint.as_deref()))
            .map_err(to_py)?;
        to_object(py, &r)
    }

    /// Loads the trained model and a whitelist for suggestions.
    #[pyo3(signature = (whitelist=None, checkpoint=None))]
    fn suggester(&self, py: Python<'_>, whitelist: Option<String>, checkpoint: Option<PathBuf>) -> PyResult<Suggester> {
        let id = match whitelist {
            Some(id) => id,
            None => pipeline::default_whitelist_id(&self.config).map_err(to_py)?,
        };
        let inner = py
            .detach(|| pipeline::load_suggester(&self.dir, &self.config, &id, checkpoint.as_deref()))
            .map_err(to_py)?;
        Ok(Suggester { inner })
    }
}

#[pyclass]
struct Suggester {
    inner: Inner,
}

#[pymethods]
impl Suggester {
    /// Ranks whitelist responses for a conversation given as
    /// `[(role, text), ...]` with role "customer" or "agent".
    #[pyo3(signature = (turns, top_k=None))]
    fn suggest(&self, py: Python<'_>, turns: Vec<(String, String)>, top_k: Option<usize>) -> PyResult<Py<PyAny>> {
        let turns = turns
            .into_iter()
            .map(|(role, text)| {
                let role = match role.as_str() {
                    "customer" => Role::Customer,
                    "agent" => Role::Agent,
                    other => return Err(PyValueError::new_err(format!("unknown role {other:?}"))),
                };
                Turn::new(role, text).map_err(to_py)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let req = SuggestRequest { turns, top_k };
        let resp = py.detach(|| self.inner.suggest(&req)).map_err(to_py)?;
        to_object(py, &resp)
    }

    fn health(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_object(py, &self.inner.health())
    }

    fn __len__(&self) -> usize {
        self.inner.whitelist().len()
    }
}

/// Area under the ROC curve, ties counted as half.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let pairs: Vec<ScoredPair> = scores.into_iter().zip(labels).map(|(s, l)| ScoredPair::new(s, l)).collect();
    eval::auc(&pairs).map_err(to_py)
}

/// Corpus BLEU of `hypotheses` against one reference each.
#[pyfunction]
fn bleu(references: Vec<String>, hypotheses: Vec<String>) -> PyResult<f64> {
    let r: Vec<&str> = references.iter().map(String::as_str).collect();
    let h: Vec<&str> = hypotheses.iter().map(String::as_str).collect();
    eval::bleu(&r, &h).map_err(to_py)
}

/// Seed of a pipeline stage derived from the master seed.
#[pyfunction]
fn derive_seed(master: u64, label: &str) -> u64 {
    derive(master, label)
}

#[pyfunction]
fn engine_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Run>()?;
    m.add_class::<Suggester>()?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(engine_version, m)?)?;
    Ok(())
}
