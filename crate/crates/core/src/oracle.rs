//! Brute-force ground truth for models small enough to enumerate.

use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{domain, Error, Result};
use crate::estimators::Functional;
use crate::gumbel::{sample_gumbel, UniformSource};
use crate::seqmodel::{Sequence, SequenceModel, Token};
use crate::stable_math::LogValue;

pub const DEFAULT_MAX_LEAVES: usize = 1_000_000;

/// Every complete sequence of a model with its log-probability, in
/// lexicographic token order.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafTable {
    pub leaves: Vec<(Sequence, LogValue)>,
}

impl LeafTable {
    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.leaves.iter().map(|(_, lp)| lp.exp()).collect()
    }

    pub fn index_of(&self, seq: &Sequence) -> Option<usize> {
        self.leaves.binary_search_by(|(s, _)| s.cmp(seq)).ok()
    }
}

/// Depth-first enumeration of all complete sequences with nonzero
/// probability. Fails once more than `max_total` leaves are found.
pub fn enumerate_leaves<M: SequenceModel + ?Sized>(model: &M, max_total: usize) -> Result<LeafTable> {
    let mut leaves = Vec::new();
    let mut stack: Vec<(Vec<Token>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((prefix, lp)) = stack.pop() {
        if model.is_complete(&prefix) {
            if leaves.len() == max_total {
                return Err(Error::EnumerationBudget(max_total));
            }
            leaves.push((Sequence(prefix), lp));
            continue;
        }
        let step = model.step(&prefix);
        // Reverse so the smallest token is popped first.
        for (tok, &s) in step.iter().enumerate().rev() {
            if s > f64::NEG_INFINITY {
                let mut next = prefix.clone();
                next.push(Token(tok as u32));
                stack.push((next, lp + s));
            }
        }
    }
    Ok(LeafTable { leaves })
}

/// Probability that sampling without replacement yields exactly `ordered`
/// as its first draws: `prod_j p_{i_j} / (1 - sum_{l<j} p_{i_l})`.
pub fn exact_swor_prob(table: &LeafTable, ordered: &[usize]) -> Result<f64> {
    let mut seen = vec![false; table.len()];
    let mut prob = 1.0;
    let mut used = 0.0;
    for &i in ordered {
        if i >= table.len() {
            return domain(format!("leaf index {i} out of range"));
        }
        if std::mem::replace(&mut seen[i], true) {
            return domain(format!("leaf index {i} repeated"));
        }
        let p = table.leaves[i].1.exp();
        prob *= p / (1.0 - used);
        used += p;
    }
    Ok(prob)
}

/// All ordered `k`-tuples of distinct indices below `n`, lexicographic.
pub fn ordered_tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..n {
            if !cur.contains(&i) {
                cur.push(i);
                go(n, k, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    if k <= n {
        go(n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Exact law of the first `k` draws over [`ordered_tuples`].
pub fn swor_law(table: &LeafTable, k: usize) -> Vec<(Vec<usize>, f64)> {
    ordered_tuples(table.len(), k)
        .into_iter()
        .map(|t| {
            let p = exact_swor_prob(table, &t).expect("tuples are distinct and in range");
            (t, p)
        })
        .collect()
}

pub fn exact_expectation<F: Functional + ?Sized>(f: &F, table: &LeafTable) -> f64 {
    table.leaves.iter().map(|(s, lp)| lp.exp() * f.eval(s)).sum()
}

/// Half the L1 distance between empirical frequencies and `exact`.
pub fn tv_distance(counts: &[u64], exact: &[f64]) -> Result<f64> {
    if counts.len() != exact.len() {
        return domain(format!("{} observed outcomes against {} exact ones", counts.len(), exact.len()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return domain("no observations");
    }
    let n = total as f64;
    Ok(0.5 * counts.iter().zip(exact).map(|(&c, &p)| (c as f64 / n - p).abs()).sum::<f64>())
}

/// Pearson statistic and its degrees of freedom (`outcomes - 1`).
pub fn chi_square_stat(counts: &[u64], exact: &[f64]) -> Result<(f64, usize)> {
    if counts.len() != exact.len() {
        return domain(format!("{} observed outcomes against {} exact ones", counts.len(), exact.len()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return domain("no observations");
    }
    if let Some(i) = exact.iter().position(|&p| p <= 0.0) {
        return domain(format!("outcome {i} has zero expected count"));
    }
    let n = total as f64;
    let stat = counts
        .iter()
        .zip(exact)
        .map(|(&c, &p)| {
            let e = n * p;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    Ok((stat, counts.len() - 1))
}

/// Upper `alpha` quantile of the chi-square distribution with `dof`
/// degrees of freedom.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    if dof == 0 {
        return 0.0;
    }
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(1.0 - alpha)
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// `exp(-exp(phi - x))`.
pub fn gumbel_cdf(phi: f64, x: f64) -> f64 {
    (-(phi - x).exp()).exp()
}

/// Tallies outcomes by key, returning counts aligned with `outcomes`.
/// Keys not in `outcomes` are an error.
pub fn tally<K: Ord + Clone>(outcomes: &[K], observed: impl IntoIterator<Item = K>) -> Result<Vec<u64>> {
    let index: BTreeMap<K, usize> = outcomes.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    let mut counts = vec![0u64; outcomes.len()];
    for key in observed {
        match index.get(&key) {
            Some(&i) => counts[i] += 1,
            None => return domain("observed an outcome outside the exact table"),
        }
    }
    Ok(counts)
}

/// Bottom-up reference coupling: one Gumbel per leaf (in table order), then
/// each prefix's key is the maximum over the leaves below it.
pub fn bottom_up_keys<U: UniformSource + ?Sized>(table: &LeafTable, stream: &mut U) -> BTreeMap<Sequence, f64> {
    let mut keys: BTreeMap<Sequence, f64> = BTreeMap::new();
    for (seq, phi) in &table.leaves {
        let g = sample_gumbel(stream, *phi);
        for len in 0..=seq.len() {
            let node = Sequence(seq.tokens()[..len].to_vec());
            let slot = keys.entry(node).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(g);
        }
    }
    keys
}

/// `log p` of every prefix, as the log of the leaf mass below it.
pub fn prefix_log_masses(table: &LeafTable) -> BTreeMap<Sequence, f64> {
    let mut mass: BTreeMap<Sequence, f64> = BTreeMap::new();
    for (seq, phi) in &table.leaves {
        for len in 0..=seq.len() {
            *mass.entry(Sequence(seq.tokens()[..len].to_vec())).or_insert(0.0) += phi.exp();
        }
    }
    mass.into_iter().map(|(s, m)| (s, m.ln())).collect()
}

/// Expected number of i.i.d. draws from `probs` until `k` distinct
/// outcomes have been seen. Exact, by recursion over the set seen so far.
pub fn expected_draws_for_distinct(probs: &[f64], k: usize) -> Result<f64> {
    let n = probs.len();
    if n > 20 {
        return domain("at most 20 outcomes supported");
    }
    if k > probs.iter().filter(|&&p| p > 0.0).count() {
        return domain("fewer outcomes with positive probability than k");
    }
    fn go(probs: &[f64], k: usize, seen: u32, mass: f64, memo: &mut BTreeMap<u32, f64>) -> f64 {
        if seen.count_ones() as usize == k {
            return 0.0;
        }
        if let Some(&v) = memo.get(&seen) {
            return v;
        }
        let rest = 1.0 - mass;
        let mut e = 1.0 / rest;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 && seen & (1 << i) == 0 {
                e += p / rest * go(probs, k, seen | (1 << i), mass + p, memo);
            }
        }
        memo.insert(seen, e);
        e
    }
    Ok(go(probs, k, 0, 0.0, &mut BTreeMap::new()))
}
