//! Self-checks run by `sbs verify`: sampling laws against exact tables,
//! the parent/child key coupling, numeric stability, estimator bias and
//! the cost of each sampler.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::estimators::{entropy_functional, log_importance_weight, mc_estimate, weighted_estimate, Functional, SERIES_CUTOFF};
use crate::gumbel::{gumbel_top_k, RandomStream, UniformSource};
use crate::metrics::{bleu, ngram_diversity, NGramMultiset};
use crate::oracle::{
    chi_square_critical, chi_square_stat, enumerate_leaves, exact_expectation, expected_draws_for_distinct, ks_distance,
    swor_law, tv_distance, LeafTable,
};
use crate::reference::hp;
use crate::search::{
    ancestral_sample, beam_search, naive_stepwise_swor, rejection_swor, stochastic_beam_search,
    stochastic_beam_search_observed, stochastic_beam_search_with_threshold, BeamEntry,
};
use crate::seqmodel::{apply_temperature, train_markov, ExplicitTreeModel, Sequence, SequenceModel, Token};
use crate::truncated_gumbel::{shift_to_max, TruncatedGumbel};

/// Trees with more leaves than this are rejected; the pair table grows
/// quadratically.
pub const MAX_VERIFY_LEAVES: usize = 64;

const CORPUS: &str = include_str!("../../../data/corpus.txt");

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: u8,
    pub name: String,
    pub measured: String,
    pub threshold: String,
    pub pass: bool,
}

impl Check {
    fn new(id: u8, name: &str, measured: String, threshold: impl Into<String>, pass: bool) -> Self {
        Self {
            id,
            name: name.into(),
            measured,
            threshold: threshold.into(),
            pass,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {}: {} (threshold {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.threshold
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    OracleEquivalence,
    Coupling,
    NumericStability,
    Unbiasedness,
    Variance,
    NaiveBias,
    Cost,
    Diversity,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::OracleEquivalence,
        Suite::Coupling,
        Suite::NumericStability,
        Suite::Unbiasedness,
        Suite::Variance,
        Suite::NaiveBias,
        Suite::Cost,
        Suite::Diversity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::OracleEquivalence => "oracle-equivalence",
            Suite::Coupling => "coupling",
            Suite::NumericStability => "numeric-stability",
            Suite::Unbiasedness => "unbiasedness",
            Suite::Variance => "variance",
            Suite::NaiveBias => "naive-bias",
            Suite::Cost => "cost",
            Suite::Diversity => "diversity",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown suite {s:?}")))
    }
}

/// Inputs shared by the suites.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Tree used by the sampling-law, coupling, unbiasedness and bias
    /// suites.
    pub tree: ExplicitTreeModel,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tree: ExplicitTreeModel::demo(),
            seed: 0,
        }
    }
}

impl VerifyConfig {
    fn table(&self) -> Result<LeafTable> {
        let table = enumerate_leaves(&self.tree, MAX_VERIFY_LEAVES)
            .map_err(|_| Error::Domain(format!("verification needs a tree with at most {MAX_VERIFY_LEAVES} leaves")))?;
        if table.len() < 3 {
            return domain("verification needs a tree with at least 3 leaves");
        }
        Ok(table)
    }

    /// Independent stream per suite so suites can run in any order.
    fn stream(&self, suite: Suite, part: u64) -> RandomStream {
        RandomStream::substream(self.seed, (suite as u64) << 32 | part)
    }
}

pub fn run(suite: Suite, cfg: &VerifyConfig) -> Result<Vec<Check>> {
    match suite {
        Suite::OracleEquivalence => oracle_equivalence(cfg),
        Suite::Coupling => coupling(cfg),
        Suite::NumericStability => Ok(numeric_stability()),
        Suite::Unbiasedness => unbiasedness(cfg),
        Suite::Variance => variance(cfg),
        Suite::NaiveBias => naive_bias(cfg),
        Suite::Cost => cost(cfg),
        Suite::Diversity => diversity(cfg),
    }
}

fn index_of_sample(table: &LeafTable, entries: &[BeamEntry]) -> Vec<usize> {
    entries
        .iter()
        .map(|e| table.index_of(&e.seq).expect("sampled sequence is a leaf"))
        .collect()
}

/// Counts of ordered `k`-tuples in the layout of [`swor_law`].
fn tuple_counts(law: &[(Vec<usize>, f64)], draws: impl Iterator<Item = Vec<usize>>) -> Vec<u64> {
    let pos: HashMap<&[usize], usize> = law.iter().enumerate().map(|(i, (t, _))| (t.as_slice(), i)).collect();
    let mut counts = vec![0u64; law.len()];
    for d in draws {
        counts[pos[d.as_slice()]] += 1;
    }
    counts
}

fn fmt_sci(x: f64) -> String {
    format!("{x:.3e}")
}

fn oracle_equivalence(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let table = cfg.table()?;
    let law = swor_law(&table, 2);
    let exact: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
    let phis: Vec<f64> = table.leaves.iter().map(|(_, lp)| *lp).collect();
    let n = 200_000;
    let mut out = Vec::new();

    let mut s = cfg.stream(Suite::OracleEquivalence, 1);
    let flat = tuple_counts(&law, (0..n).map(|_| gumbel_top_k(&phis, 2, &mut s).expect("phis are valid")));
    let tv_flat = tv_distance(&flat, &exact)?;
    out.push(Check::new(1, "Gumbel-Top-k law, k=2", format!("TV {tv_flat:.4}"), "< 0.01", tv_flat < 0.01));

    let mut s = cfg.stream(Suite::OracleEquivalence, 2);
    let mut sbs = Vec::with_capacity(n);
    for _ in 0..n {
        sbs.push(index_of_sample(&table, &stochastic_beam_search(&cfg.tree, 2, &mut s)?.entries));
    }
    let sbs_counts = tuple_counts(&law, sbs.into_iter());
    let tv_sbs = tv_distance(&sbs_counts, &exact)?;
    let total = n as f64;
    let flat_freq: Vec<f64> = flat.iter().map(|&c| c as f64 / total).collect();
    let tv_cross = tv_distance(&sbs_counts, &flat_freq)?;
    out.push(Check::new(
        2,
        "SBS law, k=2",
        format!("TV exact {tv_sbs:.4}, TV flat {tv_cross:.4}"),
        "< 0.01 each",
        tv_sbs < 0.01 && tv_cross < 0.01,
    ));

    let four = ExplicitTreeModel::parse("0 1 0 0.3\n0 2 1 0.7\n1 3 0 0.5\n1 4 1 0.5\n2 5 0 0.2\n2 6 1 0.8\n")?;
    let t4 = enumerate_leaves(&four, 4)?;
    let law4 = swor_law(&t4, 4);
    let mut s = cfg.stream(Suite::OracleEquivalence, 3);
    let mut draws = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        draws.push(index_of_sample(&t4, &stochastic_beam_search(&four, 4, &mut s)?.entries));
    }
    let counts = tuple_counts(&law4, draws.into_iter());
    let exact4: Vec<f64> = law4.iter().map(|(_, p)| *p).collect();
    let (stat, dof) = chi_square_stat(&counts, &exact4)?;
    let crit = chi_square_critical(dof, 1e-3);
    out.push(Check::new(
        3,
        "full ranking law, 4 leaves",
        format!("chi2 {stat:.2} on {dof} dof"),
        format!("< {crit:.2}"),
        stat < crit,
    ));

    let mut s = cfg.stream(Suite::OracleEquivalence, 4);
    let mut mismatches = 0;
    for _ in 0..50 {
        let tree = random_tree(&mut s, 4, 3)?;
        let leaves = enumerate_leaves(&tree, 1 << 12)?;
        let mut expect = leaves.leaves.clone();
        expect.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let got = beam_search(&tree, leaves.len())?;
        let same = got.len() == expect.len()
            && got
                .iter()
                .zip(&expect)
                .all(|(g, (seq, lp))| g.seq == *seq && (g.phi - lp).abs() < 1e-12);
        mismatches += usize::from(!same);
    }
    out.push(Check::new(
        13,
        "exhaustive beam search, 50 random trees",
        format!("{mismatches} mismatches"),
        "0",
        mismatches == 0,
    ));
    Ok(out)
}

/// A random tree of depth at most `max_depth` whose nodes have 1 to
/// `max_branch` children with random conditionals.
pub fn random_tree<U: UniformSource + ?Sized>(
    stream: &mut U,
    max_depth: usize,
    max_branch: usize,
) -> Result<ExplicitTreeModel> {
    let mut edges = Vec::new();
    let mut next_id = 1u64;
    let mut frontier = vec![(0u64, 0usize)];
    while let Some((node, depth)) = frontier.pop() {
        let leaf = depth == max_depth || (depth > 0 && stream.next_uniform() < 0.3);
        if leaf {
            continue;
        }
        let branch = 1 + (stream.next_uniform() * max_branch as f64) as usize;
        let weights: Vec<f64> = (0..branch).map(|_| 0.05 + stream.next_uniform()).collect();
        let sum: f64 = weights.iter().sum();
        for (tok, w) in weights.iter().enumerate() {
            edges.push((node, next_id, tok as u32, w / sum));
            frontier.push((next_id, depth + 1));
            next_id += 1;
        }
    }
    ExplicitTreeModel::from_edges(&edges)
}

fn coupling(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut s = cfg.stream(Suite::Coupling, 1);
    let mut violations = 0usize;
    let mut expansions = 0usize;
    let mut observe = |parent: &BeamEntry, keys: &[f64]| {
        expansions += 1;
        let max = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if (max - parent.key).abs() > 1e-9 || keys.iter().any(|&k| k > parent.key) {
            violations += 1;
        }
    };
    for _ in 0..200_000 {
        stochastic_beam_search_observed(&cfg.tree, 2, &mut s, &mut observe)?;
    }
    let mut out = vec![Check::new(
        4,
        "max child key = parent key",
        format!("{violations} violations in {expansions} expansions"),
        "0",
        violations == 0,
    )];

    let phis = [0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()];
    let parent = 0.7;
    let mut s = cfg.stream(Suite::Coupling, 2);
    let mut per_child: Vec<Vec<f64>> = vec![Vec::new(); phis.len()];
    let mut not_exact = 0usize;
    for _ in 0..100_000 {
        let keys = crate::truncated_gumbel::sample_children_conditional(&mut s, &phis, parent)?;
        let top = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top.to_bits() != parent.to_bits() {
            not_exact += 1;
        }
        for (i, &k) in keys.iter().enumerate() {
            if k.to_bits() != parent.to_bits() {
                per_child[i].push(k);
            }
        }
    }
    let worst = per_child
        .iter()
        .zip(&phis)
        .map(|(xs, &phi)| {
            let d = TruncatedGumbel::new(phi, parent);
            ks_distance(xs, |x| d.cdf(x))
        })
        .fold(0.0, f64::max);
    out.push(Check::new(
        5,
        "truncated Gumbel marginals",
        format!("max KS {worst:.4}, {not_exact} inexact maxima"),
        "KS < 0.01, 0 inexact",
        worst < 0.01 && not_exact == 0,
    ));
    Ok(out)
}

fn numeric_stability() -> Vec<Check> {
    let mut worst = 0.0f64;
    let grid: Vec<f64> = (0..=12).map(|i| -30.0 + 5.0 * i as f64).collect();
    for &t in &grid {
        for &a in &grid {
            for &b in &grid {
                let keys = [a, b, (a + b) / 2.0];
                let stable = shift_to_max(&keys, t).expect("finite keys");
                let exact = hp::naive_shift(&keys, t);
                for (x, y) in stable.iter().zip(&exact) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    let big = [-720.0, -705.0, 700.0, 0.0];
    let stable_big = shift_to_max(&big, -700.0).expect("finite keys");
    let z = 700.0f64;
    let naive_overflows = big
        .iter()
        .any(|&g| !(-(700.0f64.exp() - (-z).exp() + (-g).exp()).ln()).is_finite());
    let finite = stable_big.iter().all(|v| v.is_finite());
    let mut out = vec![Check::new(
        6,
        "stable truncated-Gumbel shift",
        format!(
            "max error {} for |x| <= 30; magnitude 700: naive {}, stable {}",
            fmt_sci(worst),
            if naive_overflows { "overflows" } else { "finite" },
            if finite { "finite" } else { "non-finite" }
        ),
        "< 1e-9; stable finite",
        worst < 1e-9 && finite,
    )];

    let mut rel = 0.0f64;
    for i in 0..=600 {
        let x = -40.0 + 30.0 * i as f64 / 600.0;
        for kappa in [-25.0, -1.0, 0.0, 3.5] {
            let got = log_importance_weight(kappa + x, kappa);
            let want = hp::log_importance_weight(kappa + x, kappa);
            rel = rel.max(((got - want) / want).abs());
        }
    }
    let kappa = -1.25;
    let jump = (log_importance_weight(kappa + SERIES_CUTOFF - 1e-12, kappa)
        - log_importance_weight(kappa + SERIES_CUTOFF, kappa))
    .abs();
    out.push(Check::new(
        7,
        "log importance weight",
        format!("max rel error {} on [-40, -10], jump {}", fmt_sci(rel), fmt_sci(jump)),
        "< 1e-10; jump < 1e-9",
        rel < 1e-10 && jump < 1e-9,
    ));
    out
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn sample_variance(xs: &[f64]) -> f64 {
    let (_, se) = mean_se(xs);
    se * se * xs.len() as f64
}

fn unbiasedness(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let table = cfg.table()?;
    let f = entropy_functional(&cfg.tree);
    let exact = exact_expectation(&f, &table);
    let mut s = cfg.stream(Suite::Unbiasedness, 1);
    let mut ests = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let sample = stochastic_beam_search_with_threshold(&cfg.tree, 5, &mut s)?;
        ests.push(weighted_estimate(&f, &sample)?.raw);
    }
    let (mean, se) = mean_se(&ests);
    let mut out = vec![Check::new(
        8,
        "priority estimator unbiased, entropy, k_keep=4",
        format!("mean {mean:.5} vs exact {exact:.5}, |diff| {:.5}, SE {se:.5}", (mean - exact).abs()),
        "|diff| < 4 SE",
        (mean - exact).abs() < 4.0 * se,
    )];

    let n = table.len();
    let mut s = cfg.stream(Suite::Unbiasedness, 2);
    let mut worst = 0.0f64;
    let mut worst_const = 0.0f64;
    for _ in 0..1000 {
        let full = stochastic_beam_search_with_threshold(&cfg.tree, n + 1, &mut s)?;
        let e = weighted_estimate(&f, &full)?;
        worst = worst.max((e.raw - exact).abs()).max((e.normalized - exact).abs());
        let c = weighted_estimate(&|_: &Sequence| 2.5, &full)?;
        worst_const = worst_const.max((c.normalized - 2.5).abs());
    }
    out.push(Check::new(
        9,
        "consistency at k = n",
        format!("max error {}, constant functional error {}", fmt_sci(worst), fmt_sci(worst_const)),
        "< 1e-9",
        worst < 1e-9 && worst_const < 1e-9,
    ));
    Ok(out)
}

/// Order-2 character model of the bundled corpus.
pub fn corpus_model() -> Result<crate::seqmodel::MarkovTextModel> {
    train_markov(CORPUS, 2, 0.1, 40)
}

/// Sharpens the corpus model to about 2.3 nats.
pub const VARIANCE_TEMPERATURE: f64 = 0.1;

fn variance(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let base = corpus_model()?;
    let model = apply_temperature(&base, VARIANCE_TEMPERATURE)?;
    let eos = model.eos();
    let reference: Vec<Token> = beam_search(&model, 10)?[0].seq.content(eos).to_vec();
    let entropy = entropy_functional(&model);
    let bleu_f = |y: &Sequence| bleu(y.content(eos), &reference, 4).unwrap_or(0.0);
    let mut details = Vec::new();
    let mut pass = true;
    let mut entropy_mc = Vec::new();
    for k in [5usize, 20] {
        let mut mc = [Vec::new(), Vec::new()];
        let mut sbs = [Vec::new(), Vec::new()];
        for r in 0..1000u64 {
            let mut s = cfg.stream(Suite::Variance, (k as u64) << 20 | r);
            let draws: Vec<Sequence> = (0..k)
                .map(|_| ancestral_sample(&model, &mut s).map(|e| e.seq))
                .collect::<Result<_>>()?;
            let sample = stochastic_beam_search_with_threshold(&model, k, &mut s)?;
            let fs: [&dyn Functional; 2] = [&entropy, &bleu_f];
            for (i, f) in fs.into_iter().enumerate() {
                mc[i].push(mc_estimate(f, &draws)?);
                sbs[i].push(weighted_estimate(f, &sample)?.normalized);
            }
        }
        entropy_mc.extend_from_slice(&mc[0]);
        for (i, name) in ["entropy", "bleu"].into_iter().enumerate() {
            let (vm, vs) = (sample_variance(&mc[i]), sample_variance(&sbs[i]));
            pass &= vs <= vm;
            details.push(format!("k={k} {name}: {} <= {}", fmt_sci(vs), fmt_sci(vm)));
        }
    }
    let h = entropy_mc.iter().sum::<f64>() / entropy_mc.len() as f64;
    Ok(vec![Check::new(
        10,
        "normalized SBS variance <= MC variance",
        format!("T={VARIANCE_TEMPERATURE}, entropy {h:.2} nats; {}", details.join("; ")),
        "every pair",
        pass,
    )])
}

fn naive_bias(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let table = cfg.table()?;
    let law = swor_law(&table, 2);
    let exact: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
    let mut s = cfg.stream(Suite::NaiveBias, 1);
    let mut draws = Vec::with_capacity(200_000);
    for _ in 0..200_000 {
        draws.push(index_of_sample(&table, &naive_stepwise_swor(&cfg.tree, 2, &mut s)?.entries));
    }
    let tv = tv_distance(&tuple_counts(&law, draws.into_iter()), &exact)?;
    Ok(vec![Check::new(
        11,
        "naive stepwise sampler is biased",
        format!("TV {tv:.4}"),
        "> 0.02",
        tv > 0.02,
    )])
}

fn cost(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let markov = corpus_model()?;
    let mut s = cfg.stream(Suite::Cost, 1);
    let mut over = 0usize;
    let mut runs = 0usize;
    for k in [1usize, 2, 3, 5, 8] {
        for _ in 0..2000 {
            let e = stochastic_beam_search(&cfg.tree, k, &mut s)?.evaluations;
            over += usize::from(e > k * cfg.tree.max_len());
            runs += 1;
        }
        for _ in 0..20 {
            let e = stochastic_beam_search(&markov, k, &mut s)?.evaluations;
            over += usize::from(e > k * markov.max_len());
            runs += 1;
        }
    }

    let two = ExplicitTreeModel::parse("0 1 0 0.99\n0 2 1 0.01\n")?;
    let expected = expected_draws_for_distinct(&[0.99, 0.01], 2)?;
    let mut s = cfg.stream(Suite::Cost, 2);
    let mut total = 0usize;
    for _ in 0..10_000 {
        total += rejection_swor(&two, 2, &mut s, usize::MAX)?.draws;
    }
    let mean = total as f64 / 10_000.0;
    let rel = (mean - expected).abs() / expected;
    Ok(vec![Check::new(
        12,
        "cost: SBS evaluations <= k * max_len; rejection draws",
        format!("{over} of {runs} runs over budget; rejection mean draws {mean:.2} vs expected {expected:.2} for k=2"),
        "0 over; within 10%",
        over == 0 && rel < 0.1,
    )])
}

fn diversity(cfg: &VerifyConfig) -> Result<Vec<Check>> {
    let mut s = cfg.stream(Suite::Diversity, 1);
    let mut outside = 0usize;
    let mut below_premise = 0usize;
    let mut literal_misses = 0usize;
    for _ in 0..1000 {
        let k = 1 + (s.next_uniform() * 8.0) as usize;
        let n = 1 + (s.next_uniform() * 4.0) as usize;
        let seqs: Vec<Vec<Token>> = (0..k)
            .map(|_| {
                let len = n + (s.next_uniform() * 8.0) as usize;
                (0..len).map(|_| Token((s.next_uniform() * 6.0) as u32)).collect()
            })
            .collect();
        let d = ngram_diversity(&seqs, n)?;
        let sets: Vec<NGramMultiset> = seqs.iter().map(|x| NGramMultiset::new(x, n)).collect();
        let total: usize = sets.iter().map(NGramMultiset::total).sum();
        let best = sets.iter().map(|m| m.distinct().count()).max().unwrap_or(0);
        if d > 1.0 || d < best as f64 / total as f64 {
            outside += 1;
        }
        let no_repeats = sets.iter().all(|m| m.distinct().count() == m.total());
        if d < 1.0 / k as f64 {
            if no_repeats {
                below_premise += 1;
            } else {
                literal_misses += 1;
            }
        }
    }
    let identical: Vec<Vec<Token>> = vec![(0..6).map(Token).collect(); 5];
    let exact = (1..=4).all(|n| ngram_diversity(&identical, n).ok() == Some(0.2));
    Ok(vec![Check::new(
        14,
        "n-gram diversity bounds, 1000 random sets",
        format!(
            "{outside} outside [max distinct/total, 1]; {below_premise} below 1/k without repeats; \
             {literal_misses} below 1/k with repeated n-grams; identical sets exact: {exact}"
        ),
        "0, 0, identical exact",
        outside == 0 && below_premise == 0 && exact,
    )])
}
