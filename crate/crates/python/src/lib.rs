//! Python bindings: models, samplers, estimators and metrics.
//!
//! Sequences cross the boundary as lists of token ids. Randomness is always
//! given as `(seed, stream_index)`, matching the substreams the CLI uses.

use std::collections::HashMap;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use sbs_core::estimators::{entropy_functional, log_importance_weight, weighted_estimate};
use sbs_core::gumbel::{gumbel_top_k, RandomStream};
use sbs_core::metrics;
use sbs_core::oracle::{enumerate_leaves, DEFAULT_MAX_LEAVES};
use sbs_core::search::{self, BeamEntry, SworSample};
use sbs_core::seqmodel::{apply_temperature, train_markov, AnyModel, ExplicitTreeModel, Sequence, SequenceModel, Token};

fn err(e: sbs_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tokens(ids: &[u32]) -> Vec<Token> {
    ids.iter().copied().map(Token).collect()
}

/// A tree or Markov model at a fixed softmax temperature.
#[pyclass(frozen, skip_from_py_object, module = "stochastic_beams")]
#[derive(Clone)]
struct Model {
    inner: Arc<AnyModel>,
    temperature: f64,
}

impl Model {
    fn wrap(m: AnyModel) -> Self {
        Self {
            inner: Arc::new(m),
            temperature: 1.0,
        }
    }

    /// Runs `f` on the tempered model.
    fn with<R>(&self, f: impl FnOnce(&dyn SequenceModel) -> sbs_core::Result<R>) -> PyResult<R> {
        let tempered = apply_temperature(&*self.inner, self.temperature).map_err(err)?;
        f(&tempered).map_err(err)
    }
}

#[pymethods]
impl Model {
    /// Tree from `parent child token prob` lines.
    #[staticmethod]
    fn tree(text: &str) -> PyResult<Self> {
        Ok(Self::wrap(AnyModel::Tree(ExplicitTreeModel::parse(text).map_err(err)?)))
    }

    /// The bundled eight-leaf tree.
    #[staticmethod]
    fn demo_tree() -> Self {
        Self::wrap(AnyModel::Tree(ExplicitTreeModel::demo()))
    }

    #[staticmethod]
    #[pyo3(signature = (corpus, order = 2, alpha = 0.1, max_len = 40))]
    fn train_markov(corpus: &str, order: usize, alpha: f64, max_len: usize) -> PyResult<Self> {
        Ok(Self::wrap(AnyModel::Markov(
            train_markov(corpus, order, alpha, max_len).map_err(err)?,
        )))
    }

    /// A tree file or saved Markov model.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(Self::wrap(AnyModel::parse(&text).map_err(err)?))
    }

    fn with_temperature(&self, temperature: f64) -> PyResult<Self> {
        apply_temperature(&*self.inner, temperature).map_err(err)?;
        Ok(Self {
            inner: self.inner.clone(),
            temperature,
        })
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.temperature
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn max_len(&self) -> usize {
        self.inner.max_len()
    }

    #[getter]
    fn eos(&self) -> Option<u32> {
        self.inner.eos().map(|t| t.0)
    }

    /// Next-token log-probabilities after `prefix`.
    fn step(&self, prefix: Vec<u32>) -> PyResult<Vec<f64>> {
        let prefix = tokens(&prefix);
        if self.inner.is_complete(&prefix) {
            return Err(PyValueError::new_err("prefix is already complete"));
        }
        self.with(|m| Ok(m.step(&prefix)))
    }

    fn logprob(&self, seq: Vec<u32>) -> PyResult<f64> {
        self.with(|m| sbs_core::seqmodel::seq_logprob(m, &tokens(&seq)))
    }

    fn render(&self, seq: Vec<u32>) -> String {
        self.inner.render(&tokens(&seq))
    }

    fn parse_sequence(&self, text: &str) -> PyResult<Vec<u32>> {
        Ok(self.inner.parse_sequence(text).map_err(err)?.ids())
    }

    fn to_text(&self) -> String {
        match &*self.inner {
            AnyModel::Tree(t) => t.to_text(),
            AnyModel::Markov(m) => m.to_text(),
        }
    }

    /// Every complete sequence with its log-probability, in token order.
    #[pyo3(signature = (max_leaves = DEFAULT_MAX_LEAVES))]
    fn leaves(&self, max_leaves: usize) -> PyResult<Vec<(Vec<u32>, f64)>> {
        let table = self.with(|m| enumerate_leaves(m, max_leaves))?;
        Ok(table.leaves.into_iter().map(|(s, lp)| (s.ids(), lp)).collect())
    }

    fn __repr__(&self) -> String {
        let kind = match &*self.inner {
            AnyModel::Tree(_) => "tree",
            AnyModel::Markov(_) => "markov",
        };
        format!(
            "Model({kind}, vocab_size={}, max_len={}, temperature={})",
            self.inner.vocab_size(),
            self.inner.max_len(),
            self.temperature
        )
    }
}

/// Sequences drawn or decoded together, best key first.
#[pyclass(frozen, module = "stochastic_beams")]
struct Sample {
    inner: SworSample,
}

fn entry_tuple(e: &BeamEntry) -> (Vec<u32>, f64, f64) {
    (e.seq.ids(), e.phi, e.key)
}

#[pymethods]
impl Sample {
    /// `(tokens, log_prob, key)` triples.
    #[getter]
    fn entries(&self) -> Vec<(Vec<u32>, f64, f64)> {
        self.inner.entries.iter().map(entry_tuple).collect()
    }

    #[getter]
    fn sequences(&self) -> Vec<Vec<u32>> {
        self.inner.entries.iter().map(|e| e.seq.ids()).collect()
    }

    /// Threshold key for the estimators; `None` outside estimator mode.
    #[getter]
    fn kappa(&self) -> Option<f64> {
        self.inner.kappa
    }

    #[getter]
    fn evaluations(&self) -> usize {
        self.inner.evaluations
    }

    #[getter]
    fn draws(&self) -> usize {
        self.inner.draws
    }

    #[getter]
    fn exhausted(&self) -> bool {
        self.inner.exhausted
    }

    fn __len__(&self) -> usize {
        self.inner.entries.len()
    }

    fn __repr__(&self) -> String {
        format!("Sample(len={}, kappa={:?})", self.inner.entries.len(), self.inner.kappa)
    }
}

fn stream(seed: u64, index: u64) -> RandomStream {
    RandomStream::substream(seed, index)
}

#[pyfunction]
#[pyo3(signature = (model, k, seed = 0, stream_index = 0))]
fn stochastic_beam_search(model: &Model, k: usize, seed: u64, stream_index: u64) -> PyResult<Sample> {
    let mut s = stream(seed, stream_index);
    let inner = model.with(|m| search::stochastic_beam_search(m, k, &mut s))?;
    Ok(Sample { inner })
}

/// Keeps `beam_width - 1` sequences and sets `kappa` to the last key.
#[pyfunction]
#[pyo3(signature = (model, beam_width, seed = 0, stream_index = 0))]
fn stochastic_beam_search_with_threshold(
    model: &Model,
    beam_width: usize,
    seed: u64,
    stream_index: u64,
) -> PyResult<Sample> {
    let mut s = stream(seed, stream_index);
    let inner = model.with(|m| search::stochastic_beam_search_with_threshold(m, beam_width, &mut s))?;
    Ok(Sample { inner })
}

#[pyfunction]
fn beam_search(model: &Model, k: usize) -> PyResult<Sample> {
    let entries = model.with(|m| search::beam_search(m, k))?;
    Ok(Sample {
        inner: SworSample {
            entries,
            ..Default::default()
        },
    })
}

/// `k` independent draws, with replacement.
#[pyfunction]
#[pyo3(signature = (model, k, seed = 0, stream_index = 0))]
fn ancestral_samples(model: &Model, k: usize, seed: u64, stream_index: u64) -> PyResult<Vec<(Vec<u32>, f64)>> {
    let mut s = stream(seed, stream_index);
    model.with(|m| {
        (0..k)
            .map(|_| search::ancestral_sample(m, &mut s).map(|e| (e.seq.ids(), e.phi)))
            .collect()
    })
}

#[pyfunction]
#[pyo3(signature = (model, k, max_draws = 100_000, seed = 0, stream_index = 0))]
fn rejection_swor(model: &Model, k: usize, max_draws: usize, seed: u64, stream_index: u64) -> PyResult<Sample> {
    let mut s = stream(seed, stream_index);
    let inner = model.with(|m| search::rejection_swor(m, k, &mut s, max_draws))?;
    Ok(Sample { inner })
}

/// Indices of the top `k` perturbed log-weights, in order.
#[pyfunction]
#[pyo3(signature = (phis, k, seed = 0, stream_index = 0))]
fn gumbel_top_k_indices(phis: Vec<f64>, k: usize, seed: u64, stream_index: u64) -> PyResult<Vec<usize>> {
    gumbel_top_k(&phis, k, &mut stream(seed, stream_index)).map_err(err)
}

#[pyfunction(name = "log_importance_weight")]
fn py_log_importance_weight(phi: f64, kappa: f64) -> f64 {
    log_importance_weight(phi, kappa)
}

/// `(raw, normalized, weight_sum)` for `f` over a threshold sample. `f`
/// takes a token list and returns a float.
#[pyfunction]
fn estimate(py: Python<'_>, sample: &Sample, f: Bound<'_, PyAny>) -> PyResult<(f64, f64, f64)> {
    let mut values: HashMap<Sequence, f64> = HashMap::new();
    for e in &sample.inner.entries {
        values.insert(e.seq.clone(), f.call1((e.seq.ids(),))?.extract()?);
    }
    let lookup = |y: &Sequence| values[y];
    let w = py.detach(|| weighted_estimate(&lookup, &sample.inner)).map_err(err)?;
    Ok((w.raw, w.normalized, w.weight_sum))
}

/// [`estimate`] for the model's own `-log p(y)`.
#[pyfunction]
fn entropy_estimate(model: &Model, sample: &Sample) -> PyResult<(f64, f64, f64)> {
    let w = model.with(|m| weighted_estimate(&entropy_functional(m), &sample.inner))?;
    Ok((w.raw, w.normalized, w.weight_sum))
}

#[pyfunction]
#[pyo3(signature = (candidate, reference, max_n = 4))]
fn bleu(candidate: Vec<u32>, reference: Vec<u32>, max_n: usize) -> PyResult<f64> {
    metrics::bleu(&tokens(&candidate), &tokens(&reference), max_n).map_err(err)
}

#[pyfunction]
fn ngram_diversity(seqs: Vec<Vec<u32>>, n: usize) -> PyResult<f64> {
    metrics::ngram_diversity(&seqs.iter().map(|s| tokens(s)).collect::<Vec<_>>(), n).map_err(err)
}

/// Mean of `d_1..d_4` and the orders that had no n-grams.
#[pyfunction]
fn mean_diversity(seqs: Vec<Vec<u32>>) -> PyResult<(f64, Vec<usize>)> {
    let d = metrics::mean_diversity(&seqs.iter().map(|s| tokens(s)).collect::<Vec<_>>()).map_err(err)?;
    Ok((d.value, d.skipped))
}

#[pymodule]
fn stochastic_beams(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Sample>()?;
    m.add_function(wrap_pyfunction!(stochastic_beam_search, m)?)?;
    m.add_function(wrap_pyfunction!(stochastic_beam_search_with_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(beam_search, m)?)?;
    m.add_function(wrap_pyfunction!(ancestral_samples, m)?)?;
    m.add_function(wrap_pyfunction!(rejection_swor, m)?)?;
    m.add_function(wrap_pyfunction!(gumbel_top_k_indices, m)?)?;
    m.add_function(wrap_pyfunction!(py_log_importance_weight, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(ngram_diversity, m)?)?;
    m.add_function(wrap_pyfunction!(mean_diversity, m)?)?;
    Ok(())
}
