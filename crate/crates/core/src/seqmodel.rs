//! Factorized sequence distributions.
//!
//! A [`SequenceModel`] gives the conditional distribution of the next token
//! given a prefix. Probabilities of longer sequences follow from the chain
//! rule; see [`seq_logprob`].

mod markov;
mod tree;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

pub use markov::{train_markov, MarkovTextModel};
pub use tree::ExplicitTreeModel;

use crate::error::{domain, Error, Result};
use crate::stable_math::{log_normalize, LogValue};

/// Index into a model's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(pub u32);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An ordered list of tokens, partial or complete.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(pub Vec<Token>);

impl Sequence {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_ids(ids: &[u32]) -> Self {
        Self(ids.iter().map(|&i| Token(i)).collect())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn ids(&self) -> Vec<u32> {
        self.0.iter().map(|t| t.0).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// A copy extended by one token.
    pub fn extended(&self, token: Token) -> Self {
        let mut tokens = Vec::with_capacity(self.0.len() + 1);
        tokens.extend_from_slice(&self.0);
        tokens.push(token);
        Self(tokens)
    }

    /// Tokens with a trailing `eos` removed.
    pub fn content(&self, eos: Option<Token>) -> &[Token] {
        match (eos, self.0.last()) {
            (Some(e), Some(&last)) if e == last => &self.0[..self.0.len() - 1],
            _ => &self.0,
        }
    }
}

impl AsRef<[Token]> for Sequence {
    fn as_ref(&self) -> &[Token] {
        &self.0
    }
}

impl From<Vec<Token>> for Sequence {
    fn from(tokens: Vec<Token>) -> Self {
        Self(tokens)
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", t.0)?;
        }
        Ok(())
    }
}

/// One-step conditional distribution over a fixed vocabulary, with
/// termination.
///
/// Implementations must be observationally pure: the same prefix always
/// yields the same output. `step` is never called on a complete prefix.
pub trait SequenceModel {
    fn vocab_size(&self) -> usize;

    /// Upper bound on the length of any complete sequence.
    fn max_len(&self) -> usize;

    fn eos(&self) -> Option<Token> {
        None
    }

    /// Unnormalized next-token log-weights. Temperature acts on these.
    fn logits(&self, prefix: &[Token]) -> Vec<LogValue>;

    /// Normalized next-token log-probabilities.
    fn step(&self, prefix: &[Token]) -> Vec<LogValue> {
        let mut l = self.logits(prefix);
        log_normalize(&mut l);
        l
    }

    fn is_complete(&self, prefix: &[Token]) -> bool {
        prefix.len() >= self.max_len() || matches!((self.eos(), prefix.last()), (Some(e), Some(&t)) if e == t)
    }

    /// Human-readable form of a sequence.
    fn render(&self, seq: &[Token]) -> String {
        Sequence(seq.to_vec()).to_string()
    }

    /// Inverse of [`render`](Self::render) for user-supplied text.
    fn parse_sequence(&self, text: &str) -> Result<Sequence> {
        text.split_whitespace()
            .map(|w| {
                let id: u32 = w
                    .parse()
                    .map_err(|_| Error::Domain(format!("not a token id: {w:?}")))?;
                if id as usize >= self.vocab_size() {
                    return domain(format!("token {id} outside vocabulary of {}", self.vocab_size()));
                }
                Ok(Token(id))
            })
            .collect::<Result<Vec<_>>>()
            .map(Sequence)
    }
}

macro_rules! forward_model {
    ($($ty:ty),*) => {$(
        impl<M: SequenceModel + ?Sized> SequenceModel for $ty {
            fn vocab_size(&self) -> usize { (**self).vocab_size() }
            fn max_len(&self) -> usize { (**self).max_len() }
            fn eos(&self) -> Option<Token> { (**self).eos() }
            fn logits(&self, prefix: &[Token]) -> Vec<LogValue> { (**self).logits(prefix) }
            fn step(&self, prefix: &[Token]) -> Vec<LogValue> { (**self).step(prefix) }
            fn is_complete(&self, prefix: &[Token]) -> bool { (**self).is_complete(prefix) }
            fn render(&self, seq: &[Token]) -> String { (**self).render(seq) }
            fn parse_sequence(&self, text: &str) -> Result<Sequence> { (**self).parse_sequence(text) }
        }
    )*};
}

forward_model!(&M, Box<M>, Arc<M>);

/// Softmax temperature applied to a wrapped model's logits.
#[derive(Debug, Clone)]
pub struct Tempered<M> {
    inner: M,
    temperature: f64,
}

impl<M> Tempered<M> {
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

/// Wraps `model` so that `step` returns `softmax(logits / t)`.
pub fn apply_temperature<M: SequenceModel>(model: M, t: f64) -> Result<Tempered<M>> {
    if !(t > 0.0 && t.is_finite()) {
        return domain(format!("temperature must be positive and finite, got {t}"));
    }
    Ok(Tempered {
        inner: model,
        temperature: t,
    })
}

impl<M: SequenceModel> SequenceModel for Tempered<M> {
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
        let mut l = self.inner.logits(prefix);
        for v in l.iter_mut() {
            *v /= self.temperature;
        }
        l
    }

    fn is_complete(&self, prefix: &[Token]) -> bool {
        self.inner.is_complete(prefix)
    }

    fn render(&self, seq: &[Token]) -> String {
        self.inner.render(seq)
    }

    fn parse_sequence(&self, text: &str) -> Result<Sequence> {
        self.inner.parse_sequence(text)
    }
}

/// Chain-rule log-probability of `seq` (partial or complete).
pub fn seq_logprob<M: SequenceModel + ?Sized>(model: &M, seq: &[Token]) -> Result<LogValue> {
    let vocab = model.vocab_size();
    let mut total = 0.0;
    for (i, &tok) in seq.iter().enumerate() {
        if tok.index() >= vocab {
            return domain(format!("token {} outside vocabulary of {vocab}", tok.0));
        }
        let prefix = &seq[..i];
        if model.is_complete(prefix) {
            return domain(format!("sequence continues past completion at position {i}"));
        }
        total += model.step(prefix)[tok.index()];
    }
    Ok(total)
}

/// Either of the file-backed models.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Tree(ExplicitTreeModel),
    Markov(MarkovTextModel),
}

impl AnyModel {
    /// Loads a tree file or a saved Markov model, sniffing the header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let first = text
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty() && !l.starts_with('#'));
        if first == Some(markov::HEADER) {
            MarkovTextModel::from_text(text).map(Self::Markov)
        } else {
            ExplicitTreeModel::parse(text).map(Self::Tree)
        }
    }
}

impl SequenceModel for AnyModel {
    fn vocab_size(&self) -> usize {
        match self {
            Self::Tree(m) => m.vocab_size(),
            Self::Markov(m) => m.vocab_size(),
        }
    }

    fn max_len(&self) -> usize {
        match self {
            Self::Tree(m) => m.max_len(),
            Self::Markov(m) => m.max_len(),
        }
    }

    fn eos(&self) -> Option<Token> {
        match self {
            Self::Tree(m) => m.eos(),
            Self::Markov(m) => m.eos(),
        }
    }

    fn logits(&self, prefix: &[Token]) -> Vec<LogValue> {
        match self {
            Self::Tree(m) => m.logits(prefix),
            Self::Markov(m) => m.logits(prefix),
        }
    }

    fn step(&self, prefix: &[Token]) -> Vec<LogValue> {
        match self {
            Self::Tree(m) => m.step(prefix),
            Self::Markov(m) => m.step(prefix),
        }
    }

    fn is_complete(&self, prefix: &[Token]) -> bool {
        match self {
            Self::Tree(m) => m.is_complete(prefix),
            Self::Markov(m) => m.is_complete(prefix),
        }
    }

    fn render(&self, seq: &[Token]) -> String {
        match self {
            Self::Tree(m) => m.render(seq),
            Self::Markov(m) => m.render(seq),
        }
    }

    fn parse_sequence(&self, text: &str) -> Result<Sequence> {
        match self {
            Self::Tree(m) => m.parse_sequence(text),
            Self::Markov(m) => m.parse_sequence(text),
        }
    }
}
