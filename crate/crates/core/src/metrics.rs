//! Sentence-level BLEU and n-gram diversity of sample sets.
//!
//! Both work on token ids as stored. Strip end tokens before calling if they
//! should not count.

use std::collections::{HashMap, HashSet};

use crate::error::{domain, Result};
use crate::seqmodel::Token;

/// Counts of the contiguous `n`-grams of one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramMultiset {
    n: usize,
    counts: HashMap<Vec<Token>, usize>,
    total: usize,
}

impl NGramMultiset {
    pub fn new(tokens: &[Token], n: usize) -> Self {
        assert!(n >= 1, "n-gram order must be positive");
        let mut counts: HashMap<Vec<Token>, usize> = HashMap::new();
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_default() += 1;
        }
        Self {
            n,
            counts,
            total: (tokens.len() + 1).saturating_sub(n),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `max(len - n + 1, 0)`.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn count(&self, gram: &[Token]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> impl Iterator<Item = &[Token]> {
        self.counts.keys().map(Vec::as_slice)
    }

    /// Matches clipped by the reference counts.
    pub fn clipped_matches(&self, reference: &NGramMultiset) -> usize {
        self.counts.iter().map(|(g, &c)| c.min(reference.count(g))).sum()
    }
}

/// Sentence BLEU with a single reference.
///
/// Geometric mean of clipped n-gram precisions for `n = 1..=max_n` times the
/// brevity penalty `min(1, exp(1 - r/c))`. For `n >= 2` a zero match count
/// is smoothed to `1 / (total + 1)`; a zero unigram precision gives 0.
pub fn bleu(candidate: &[Token], reference: &[Token], max_n: usize) -> Result<f64> {
    if reference.is_empty() {
        return domain("BLEU needs a non-empty reference");
    }
    if max_n == 0 {
        return domain("BLEU needs max_n >= 1");
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = NGramMultiset::new(candidate, n);
        let refs = NGramMultiset::new(reference, n);
        let matches = cand.clipped_matches(&refs);
        let p = if matches > 0 {
            matches as f64 / cand.total() as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (cand.total() as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let log_bp = if c > r { 0.0 } else { 1.0 - r / c };
    Ok((log_bp + log_sum / max_n as f64).exp())
}

/// Distinct `n`-grams pooled over `seqs` divided by their total count.
pub fn ngram_diversity<S: AsRef<[Token]>>(seqs: &[S], n: usize) -> Result<f64> {
    if n == 0 {
        return domain("n-gram order must be positive");
    }
    let mut distinct: HashSet<&[Token]> = HashSet::new();
    let mut total = 0usize;
    for s in seqs {
        for w in s.as_ref().windows(n) {
            distinct.insert(w);
            total += 1;
        }
    }
    if total == 0 {
        return domain(format!("no {n}-grams in the sample set"));
    }
    Ok(distinct.len() as f64 / total as f64)
}

/// Mean of `d_1..d_4`, skipping orders with no n-grams at all.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDiversity {
    pub value: f64,
    /// Orders left out of the mean.
    pub skipped: Vec<usize>,
}

pub fn mean_diversity<S: AsRef<[Token]>>(seqs: &[S]) -> Result<MeanDiversity> {
    mean_diversity_up_to(seqs, 4)
}

pub fn mean_diversity_up_to<S: AsRef<[Token]>>(seqs: &[S], max_n: usize) -> Result<MeanDiversity> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = Vec::new();
    for n in 1..=max_n {
        match ngram_diversity(seqs, n) {
            Ok(d) => {
                sum += d;
                used += 1;
            }
            Err(_) => skipped.push(n),
        }
    }
    if used == 0 {
        return domain("sample set has no n-grams of any order");
    }
    Ok(MeanDiversity {
        value: sum / used as f64,
        skipped,
    })
}
