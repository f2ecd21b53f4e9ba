//! Python bindings: `import cmnet`.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use cmnet_core::autodiff::Tensor;
use cmnet_core::checkpoint::{read_checkpoint, write_checkpoint};
use cmnet_core::cli;
use cmnet_core::data::{self, Scheme, Utterance};
use cmnet_core::metrics::{self, Span};
use cmnet_core::model::CmNet;
use cmnet_core::{crf, Error};

create_exception!(
    cmnet,
    CmnetError,
    PyException,
    "Raised for every library error; `args[1]` is the CLI exit code."
);

fn err(e: Error) -> PyErr {
    CmnetError::new_err((e.to_string(), e.exit_code()))
}

fn scheme(name: &str) -> PyResult<Scheme> {
    name.parse().map_err(err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(CmnetError::new_err(("ragged matrix", 1)));
    }
    Tensor::new(vec![r, c], rows.into_iter().flatten().collect()).map_err(err)
}

type Record = (Vec<String>, Vec<String>, Vec<String>);

fn record(u: Utterance) -> Record {
    (u.tokens, u.slots, u.intents)
}

/// A trained (or freshly loaded) CM-Net.
#[pyclass(module = "cmnet")]
struct Model {
    inner: CmNet,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_checkpoint(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_checkpoint(path, &self.inner).map_err(err)
    }

    /// Returns `(slot_tags, intent)` for a tokenized utterance.
    fn predict(&self, tokens: Vec<String>) -> PyResult<(Vec<String>, String)> {
        let p = self.inner.predict(&tokens).map_err(err)?;
        Ok((p.slots, p.intent))
    }

    /// Slot precision/recall/F1 and intent accuracy on a corpus file.
    #[pyo3(signature = (corpus, scheme=None))]
    fn evaluate(&self, py: Python<'_>, corpus: PathBuf, scheme: Option<&str>) -> PyResult<(f64, f64, f64, f64)> {
        let s = scheme.map(self::scheme).transpose()?;
        let summary = py.detach(|| cli::cmd_eval(&self.inner, &corpus, s)).map_err(err)?;
        let e = summary.evaluation;
        Ok((e.slot.precision, e.slot.recall, e.slot.f1, e.intent_accuracy))
    }

    /// `(name, shape, trainable)` for every parameter.
    fn manifest(&self) -> Vec<(String, Vec<usize>, bool)> {
        self.inner.manifest()
    }

    #[getter]
    fn config(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serializes")
    }

    #[getter]
    fn slot_tags(&self) -> Vec<String> {
        self.inner.vocab.slots.items().to_vec()
    }

    #[getter]
    fn intents(&self) -> Vec<String> {
        self.inner.vocab.intents.items().to_vec()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model(hidden_size={}, blocks={}, slot_tags={}, intents={})",
            c.hidden_size,
            c.blocks,
            self.inner.vocab.slots.len(),
            self.inner.vocab.intents.len()
        )
    }
}

/// Trains from a JSON run config (with `key=value` overrides) and returns the
/// selected model and the per-epoch mean losses.
#[pyfunction]
#[pyo3(signature = (config, overrides=Vec::new()))]
fn train(py: Python<'_>, config: PathBuf, overrides: Vec<String>) -> PyResult<(Model, Vec<f64>)> {
    let summary = py
        .detach(|| {
            let cfg = cli::load_config(&config, &overrides, None)?;
            cli::cmd_train(&cfg, |_| {})
        })
        .map_err(err)?;
    let losses = summary.outcome.epochs.iter().map(|r| r.mean_loss).collect();
    Ok((Model { inner: summary.model }, losses))
}

/// Finite-difference gradient check; returns `(group, max_rel_error)` pairs.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=Vec::new()))]
fn gradcheck(py: Python<'_>, config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<Vec<(String, f64)>> {
    py.detach(|| {
        let cfg = config.map(|p| cli::load_config(&p, &overrides, None)).transpose()?;
        let summary = cli::cmd_gradcheck(cfg.as_ref(), None)?;
        Ok(summary.groups.into_iter().map(|g| (g.name, g.max_rel_error)).collect())
    })
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (text, scheme="bio2"))]
fn parse_corpus(text: &str, scheme: &str) -> PyResult<Vec<Record>> {
    let parsed = data::parse_corpus(text, self::scheme(scheme)?).map_err(err)?;
    Ok(parsed.into_iter().map(record).collect())
}

#[pyfunction]
fn serialize_corpus(records: Vec<Record>) -> PyResult<String> {
    let utterances = records
        .into_iter()
        .map(|(t, s, i)| Utterance::new(t, s, i))
        .collect::<cmnet_core::Result<Vec<_>>>()
        .map_err(err)?;
    Ok(data::serialize_corpus(&utterances))
}

#[pyfunction]
fn bio_to_bioes(tags: Vec<String>) -> PyResult<Vec<String>> {
    data::bio_to_bioes(&tags).map_err(err)
}

#[pyfunction]
fn bioes_to_bio(tags: Vec<String>) -> PyResult<Vec<String>> {
    data::bioes_to_bio(&tags).map_err(err)
}

/// `(label, start, end)` spans with inclusive ends.
#[pyfunction]
#[pyo3(signature = (tags, scheme="bio2"))]
fn extract_spans(tags: Vec<String>, scheme: &str) -> PyResult<Vec<(String, usize, usize)>> {
    Ok(metrics::extract_spans(&tags, self::scheme(scheme)?)
        .into_iter()
        .map(|Span { label, start, end }| (label, start, end))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (gold, pred, scheme="bio2"))]
fn span_f1(gold: Vec<Vec<String>>, pred: Vec<Vec<String>>, scheme: &str) -> PyResult<(f64, f64, f64)> {
    let s = metrics::span_f1(&gold, &pred, self::scheme(scheme)?).map_err(err)?;
    Ok((s.precision, s.recall, s.f1))
}

/// Emissions are `N x K`, transitions `(K+2) x (K+2)` with begin row `K`
/// and end column `K+1`.
#[pyfunction]
fn crf_log_partition(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>) -> PyResult<f64> {
    crf::crf_log_partition(&matrix(emissions)?, &matrix(transitions)?).map_err(err)
}

#[pyfunction]
fn viterbi_decode(emissions: Vec<Vec<f64>>, transitions: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    crf::viterbi_decode(&matrix(emissions)?, &matrix(transitions)?).map_err(err)
}

/// Dataset statistics over `{split name: path}` pairs, as the `stats` report.
#[pyfunction]
#[pyo3(signature = (files, scheme="bio2"))]
fn corpus_stats(files: Vec<(String, PathBuf)>, scheme: &str) -> PyResult<String> {
    Ok(cli::cmd_stats(&files, self::scheme(scheme)?).map_err(err)?.report())
}

#[pymodule]
fn cmnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CmnetError", m.py().get_type::<CmnetError>())?;
    m.add("TOY_CORPUS", cli::TOY_CORPUS)?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(parse_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(serialize_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(bio_to_bioes, m)?)?;
    m.add_function(wrap_pyfunction!(bioes_to_bio, m)?)?;
    m.add_function(wrap_pyfunction!(extract_spans, m)?)?;
    m.add_function(wrap_pyfunction!(span_f1, m)?)?;
    m.add_function(wrap_pyfunction!(crf_log_partition, m)?)?;
    m.add_function(wrap_pyfunction!(viterbi_decode, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_stats, m)?)?;
    Ok(())
}
