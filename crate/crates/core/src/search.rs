//! Beam search, stochastic beam search and the sampling baselines it is
//! compared against.
//!
//! All searches share one skeleton: a beam of at most `k` entries is
//! expanded level by level until every entry is complete. Complete entries
//! are carried forward unchanged (equivalently: padded with an end token of
//! conditional probability one) and compete for slots with the expansions.
//! Within a level, beam entries are expanded in beam order and children are
//! visited in token order, which fixes the order uniforms are consumed in.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::error::{domain, Error, Result};
use crate::gumbel::{argtop_k, gumbel_max, perturb, sample_gumbel, UniformSource};
use crate::seqmodel::{Sequence, SequenceModel, Token};
use crate::stable_math::LogValue;
use crate::truncated_gumbel::sample_children_conditional;

/// A partial or complete sequence on the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub seq: Sequence,
    /// Total log-probability of `seq`.
    pub phi: LogValue,
    /// Perturbed log-probability; equals `phi` for deterministic searches.
    pub key: f64,
}

impl BeamEntry {
    fn root() -> Self {
        Self {
            seq: Sequence::new(),
            phi: 0.0,
            key: 0.0,
        }
    }

    /// The Gumbel(0) noise carried by this entry, `key - phi`.
    pub fn noise(&self) -> f64 {
        self.key - self.phi
    }
}

/// Ordered set of complete sequences drawn without replacement.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SworSample {
    /// Complete sequences, highest key first (first-drawn first for
    /// rejection sampling).
    pub entries: Vec<BeamEntry>,
    /// Largest perturbed key not retained, when known. `-inf` when the
    /// whole domain was retained.
    pub kappa: Option<f64>,
    /// Number of `step` calls on the model.
    pub evaluations: usize,
    /// Ancestral draws consumed; only rejection sampling draws.
    pub draws: usize,
    /// Set when the model has fewer complete sequences than were asked for.
    pub exhausted: bool,
}

impl SworSample {
    pub fn sequences(&self) -> impl Iterator<Item = &Sequence> {
        self.entries.iter().map(|e| &e.seq)
    }
}

/// Key descending, then sequence ascending.
fn beam_order(a: &BeamEntry, b: &BeamEntry) -> Ordering {
    b.key.total_cmp(&a.key).then_with(|| a.seq.cmp(&b.seq))
}

/// Called once per expanded node with the parent and the keys assigned to
/// every vocabulary entry (masked tokens get `-inf`).
pub trait ExpansionObserver {
    fn on_expand(&mut self, parent: &BeamEntry, child_keys: &[f64]);
}

impl<F: FnMut(&BeamEntry, &[f64])> ExpansionObserver for F {
    fn on_expand(&mut self, parent: &BeamEntry, child_keys: &[f64]) {
        self(parent, child_keys)
    }
}

struct NoObserver;

impl ExpansionObserver for NoObserver {
    fn on_expand(&mut self, _: &BeamEntry, _: &[f64]) {}
}

/// Shared level-synchronous loop. `score` maps a parent and its children's
/// total log-probabilities to child keys.
fn run_beam<M, F, O>(
    model: &M,
    k: usize,
    root_key: f64,
    mut score: F,
    observer: &mut O,
) -> Result<(Vec<BeamEntry>, usize)>
where
    M: SequenceModel + ?Sized,
    F: FnMut(&BeamEntry, &[LogValue]) -> Result<Vec<f64>>,
    O: ExpansionObserver + ?Sized,
{
    if k == 0 {
        return domain("beam width must be at least 1");
    }
    let mut beam = vec![BeamEntry {
        key: root_key,
        ..BeamEntry::root()
    }];
    let mut evaluations = 0;
    while beam.iter().any(|e| !model.is_complete(e.seq.tokens())) {
        let mut expansions = Vec::with_capacity(k * 2);
        for entry in beam {
            if model.is_complete(entry.seq.tokens()) {
                expansions.push(entry);
                continue;
            }
            let logp = model.step(entry.seq.tokens());
            evaluations += 1;
            let child_phis: Vec<f64> = logp.iter().map(|lp| entry.phi + lp).collect();
            let keys = score(&entry, &child_phis)?;
            observer.on_expand(&entry, &keys);
            for (tok, (&phi, &key)) in child_phis.iter().zip(&keys).enumerate() {
                if phi > f64::NEG_INFINITY {
                    expansions.push(BeamEntry {
                        seq: entry.seq.extended(Token(tok as u32)),
                        phi,
                        key,
                    });
                }
            }
        }
        if expansions.is_empty() {
            return domain("model assigns zero probability to every continuation");
        }
        expansions.sort_by(beam_order);
        expansions.truncate(k);
        beam = expansions;
    }
    Ok((beam, evaluations))
}

/// Deterministic beam search on total log-probability. Returns up to `k`
/// complete sequences, most probable first.
pub fn beam_search<M: SequenceModel + ?Sized>(model: &M, k: usize) -> Result<Vec<BeamEntry>> {
    run_beam(model, k, 0.0, |_, phis| Ok(phis.to_vec()), &mut NoObserver).map(|(beam, _)| beam)
}

/// Stochastic beam search: an ordered sample of `k` complete sequences
/// without replacement.
///
/// The root key is fixed to 0. If the model has fewer than `k` complete
/// sequences all of them are returned and `exhausted` is set. `kappa` is
/// left unset; see [`stochastic_beam_search_with_threshold`].
pub fn stochastic_beam_search<M, U>(model: &M, k: usize, stream: &mut U) -> Result<SworSample>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
{
    stochastic_beam_search_observed(model, k, stream, &mut NoObserver)
}

/// [`stochastic_beam_search`] reporting every expansion to `observer`.
pub fn stochastic_beam_search_observed<M, U, O>(
    model: &M,
    k: usize,
    stream: &mut U,
    observer: &mut O,
) -> Result<SworSample>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
    O: ExpansionObserver + ?Sized,
{
    sbs_from_root(model, k, 0.0, stream, observer)
}

fn sbs_from_root<M, U, O>(model: &M, k: usize, root_key: f64, stream: &mut U, observer: &mut O) -> Result<SworSample>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
    O: ExpansionObserver + ?Sized,
{
    let (entries, evaluations) = run_beam(
        model,
        k,
        root_key,
        |parent, child_phis| sample_children_conditional(stream, child_phis, parent.key),
        observer,
    )?;
    Ok(SworSample {
        exhausted: entries.len() < k,
        entries,
        kappa: None,
        evaluations,
        draws: 0,
    })
}

/// Stochastic beam search of width `beam_width` that gives up its last
/// sample to obtain the empirical threshold.
///
/// Returns `beam_width - 1` entries with `kappa` set to the key of the
/// `beam_width`-th. When the model has fewer than `beam_width` complete
/// sequences, every sequence is kept and `kappa = -inf`.
///
/// Unlike [`stochastic_beam_search`] the root key is drawn from Gumbel(0)
/// (one extra uniform, consumed first). The sampled set does not depend on
/// the root key, but the threshold's distribution does, and the importance
/// weights are only unbiased for unconditioned keys.
pub fn stochastic_beam_search_with_threshold<M, U>(model: &M, beam_width: usize, stream: &mut U) -> Result<SworSample>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
{
    if beam_width < 2 {
        return domain("estimator mode needs a beam of at least 2 to keep one sample");
    }
    let root_key = sample_gumbel(stream, 0.0);
    let mut sample = sbs_from_root(model, beam_width, root_key, stream, &mut NoObserver)?;
    if sample.exhausted {
        sample.kappa = Some(f64::NEG_INFINITY);
    } else {
        let last = sample.entries.pop().expect("beam is full");
        sample.kappa = Some(last.key);
    }
    Ok(sample)
}

fn ancestral_counted<M, U>(model: &M, stream: &mut U) -> Result<(BeamEntry, usize)>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
{
    let mut entry = BeamEntry::root();
    let mut evaluations = 0;
    while !model.is_complete(entry.seq.tokens()) {
        let logp = model.step(entry.seq.tokens());
        evaluations += 1;
        let tok = gumbel_max(&logp, stream)?;
        entry.phi += logp[tok];
        entry.seq = entry.seq.extended(Token(tok as u32));
    }
    entry.key = entry.phi;
    Ok((entry, evaluations))
}

/// Draws one complete sequence token by token (sampling with replacement).
pub fn ancestral_sample<M, U>(model: &M, stream: &mut U) -> Result<BeamEntry>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
{
    ancestral_counted(model, stream).map(|(e, _)| e)
}

/// Sampling without replacement by discarding duplicate ancestral draws.
///
/// Entries come in first-appearance order with `key = phi`; no threshold is
/// available. Fails with [`Error::Budget`] when `max_draws` draws do not
/// produce `k` distinct sequences.
pub fn rejection_swor<M, U>(model: &M, k: usize, stream: &mut U, max_draws: usize) -> Result<SworSample>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
{
    if k == 0 {
        return domain("sample size must be at least 1");
    }
    let mut seen = HashSet::new();
    let mut sample = SworSample::default();
    while sample.entries.len() < k {
        if sample.draws == max_draws {
            return Err(Error::Budget {
                max_draws,
                k,
                partial: Box::new(sample),
            });
        }
        let (entry, evals) = ancestral_counted(model, stream)?;
        sample.draws += 1;
        sample.evaluations += evals;
        if seen.insert(entry.seq.clone()) {
            sample.entries.push(entry);
        }
    }
    Ok(sample)
}

/// Beam search with the top-k step replaced by Gumbel-Top-k sampling on the
/// level's partial-sequence probabilities, with fresh noise at every level.
///
/// This does not sample without replacement from the model: a partial
/// sequence must be re-drawn independently at every level, which
/// under-weights low-probability prefixes. Kept as a baseline.
pub fn naive_stepwise_swor<M, U>(model: &M, k: usize, stream: &mut U) -> Result<SworSample>
where
    M: SequenceModel + ?Sized,
    U: UniformSource + ?Sized,
{
    if k == 0 {
        return domain("sample size must be at least 1");
    }
    let mut beam = vec![BeamEntry::root()];
    let mut evaluations = 0;
    while beam.iter().any(|e| !model.is_complete(e.seq.tokens())) {
        let mut candidates = Vec::new();
        for entry in beam {
            if model.is_complete(entry.seq.tokens()) {
                candidates.push(entry);
                continue;
            }
            let logp = model.step(entry.seq.tokens());
            evaluations += 1;
            for (tok, lp) in logp.iter().enumerate() {
                let phi = entry.phi + lp;
                if phi > f64::NEG_INFINITY {
                    candidates.push(BeamEntry {
                        seq: entry.seq.extended(Token(tok as u32)),
                        phi,
                        key: phi,
                    });
                }
            }
        }
        let phis: Vec<f64> = candidates.iter().map(|c| c.phi).collect();
        let keys: Vec<f64> = perturb(&phis, stream).into_iter().map(|p| p.key).collect();
        let keep = argtop_k(&keys, k.min(candidates.len()))?;
        beam = keep
            .into_iter()
            .map(|i| BeamEntry {
                key: keys[i],
                ..candidates[i].clone()
            })
            .collect();
    }
    Ok(SworSample {
        exhausted: beam.len() < k,
        entries: beam,
        kappa: None,
        evaluations,
        draws: 0,
    })
}
