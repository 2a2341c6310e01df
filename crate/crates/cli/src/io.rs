use std::cell::Cell;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use sbs_core::search::beam_search;
use sbs_core::seqmodel::{train_markov, AnyModel, SequenceModel, Token};
use sbs_core::stable_math::LogValue;

use crate::{MarkovOptions, ModelSource, ReferenceArgs};

pub fn load_model(src: &ModelSource, opts: &MarkovOptions) -> Result<AnyModel> {
    if let Some(path) = &src.model {
        return AnyModel::load(path).with_context(|| format!("loading model {}", path.display()));
    }
    let path = src.corpus.as_ref().expect("clap requires a model source");
    let text = std::fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))?;
    let model = train_markov(&text, opts.order, opts.alpha, opts.max_len)
        .with_context(|| format!("training on {}", path.display()))?;
    Ok(AnyModel::Markov(model))
}

pub fn writer(path: Option<&Path>, fallback: impl Write + 'static) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(fallback),
    })
}

pub fn stdout_or(path: Option<&Path>) -> Result<Box<dyn Write>> {
    writer(path, io::stdout())
}

pub fn stderr_or(path: Option<&Path>) -> Result<Box<dyn Write>> {
    writer(path, io::stderr())
}

/// Reference tokens with any end token removed.
pub fn resolve_reference(model: &AnyModel, args: &ReferenceArgs) -> Result<Option<Vec<Token>>> {
    let eos = model.eos();
    if let Some(text) = &args.reference {
        let seq = model.parse_sequence(text).context("parsing --reference")?;
        let content = seq.content(eos).to_vec();
        if content.is_empty() {
            bail!("--reference is empty");
        }
        return Ok(Some(content));
    }
    if let Some(width) = args.reference_beam {
        let best = beam_search(model, width)?;
        return Ok(Some(best[0].seq.content(eos).to_vec()));
    }
    Ok(None)
}

/// Counts `step` calls made through it.
pub struct Counting<'a, M> {
    inner: &'a M,
    pub calls: Cell<usize>,
}

impl<'a, M> Counting<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }
}

impl<M: SequenceModel> SequenceModel for Counting<'_, M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn max_len(&self) -> usize {
        self.inner.max_len()
    }

    fn eos(&self) -> Option<Token> {
        self.inner.eos()
    }

    fn logits(&self, prefix: &[Token]) -> Vec<LogValue> {
        self.inner.logits(prefix)
    }

    fn step(&self, prefix: &[Token]) -> Vec<LogValue> {
        self.calls.set(self.calls.get() + 1);
        self.inner.step(prefix)
    }

    fn is_complete(&self, prefix: &[Token]) -> bool {
        self.inner.is_complete(prefix)
    }

    fn render(&self, seq: &[Token]) -> String {
        self.inner.render(seq)
    }
}
