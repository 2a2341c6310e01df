//! Estimators of `E_{y ~ p}[f(y)]` from samples drawn with or without
//! replacement.
//!
//! A sample without replacement of size `k` together with its threshold
//! `kappa` (the largest key left out) gives the unbiased priority-sampling
//! estimate `sum_i p_i / q_i(kappa) f(y_i)` with
//! `q_i(a) = P(G_{phi_i} > a) = 1 - exp(-exp(phi_i - a))`. Dividing by the
//! weight sum gives a biased but consistent alternative that is usually much
//! less noisy.

use std::fmt;
use std::str::FromStr;

use crate::error::{domain, Error, Result};
use crate::search::{BeamEntry, SworSample};
use crate::seqmodel::{seq_logprob, Sequence, SequenceModel};
use crate::stable_math::{log1mexp_unchecked, logsumexp_unchecked, LogValue};

/// Below this value of `phi - kappa` the log weight is computed from its
/// series in `z = exp(phi - kappa)`; `z < 5e-5` there.
pub const SERIES_CUTOFF: f64 = -10.0;

/// A real-valued function of complete sequences.
pub trait Functional {
    fn eval(&self, seq: &Sequence) -> f64;
}

impl<F: Fn(&Sequence) -> f64> Functional for F {
    fn eval(&self, seq: &Sequence) -> f64 {
        self(seq)
    }
}

/// `f(y) = -log p(y)`, whose expectation is the model entropy.
#[derive(Debug, Clone)]
pub struct EntropyFunctional<M> {
    model: M,
}

impl<M: SequenceModel> Functional for EntropyFunctional<M> {
    /// NaN for sequences the model cannot produce.
    fn eval(&self, seq: &Sequence) -> f64 {
        seq_logprob(&self.model, seq.tokens()).map_or(f64::NAN, |lp| -lp)
    }
}

pub fn entropy_functional<M: SequenceModel>(model: M) -> EntropyFunctional<M> {
    EntropyFunctional { model }
}

/// Plain mean of `f` over samples drawn with replacement.
pub fn mc_estimate<F: Functional + ?Sized>(f: &F, samples: &[Sequence]) -> Result<f64> {
    if samples.is_empty() {
        return domain("Monte Carlo estimate needs at least one sample");
    }
    Ok(samples.iter().map(|y| f.eval(y)).sum::<f64>() / samples.len() as f64)
}

/// `log q = log(1 - exp(-exp(phi - a)))`, the log probability that
/// `G_phi > a`.
pub fn log_q(phi: LogValue, a: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return 0.0;
    }
    if phi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let x = phi - a;
    if x < SERIES_CUTOFF {
        let z = x.exp();
        x - z / 2.0 + z * z / 24.0 - z.powi(4) / 2880.0
    } else {
        log1mexp_unchecked(-x.exp())
    }
}

/// `log(p / q)` for an entry with normalized log-probability `phi` under
/// threshold `kappa`.
pub fn log_importance_weight(phi: LogValue, kappa: f64) -> f64 {
    if kappa == f64::NEG_INFINITY || phi == f64::NEG_INFINITY {
        return phi;
    }
    let x = phi - kappa;
    if x < SERIES_CUTOFF {
        let z = x.exp();
        kappa + z / 2.0 - z * z / 24.0 + z.powi(4) / 2880.0
    } else {
        phi - log1mexp_unchecked(-x.exp())
    }
}

/// Both importance-weighted estimates from one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEstimate {
    pub raw: f64,
    pub normalized: f64,
    /// `W(S)`, the sum of importance weights.
    pub weight_sum: f64,
}

/// Computes the raw and normalized estimates together. The weights are
/// scaled by their maximum before summing so tiny weights do not underflow
/// the normalized estimate.
pub fn weighted_estimate<F: Functional + ?Sized>(f: &F, sample: &SworSample) -> Result<WeightedEstimate> {
    let kappa = sample
        .kappa
        .ok_or_else(|| Error::Contract("importance weighting needs a sample with a threshold".into()))?;
    if sample.entries.is_empty() {
        return domain("importance weighting needs at least one retained sample");
    }
    let log_w: Vec<f64> = sample
        .entries
        .iter()
        .map(|e| log_importance_weight(e.phi, kappa))
        .collect();
    let log_wsum = logsumexp_unchecked(&log_w);
    if log_wsum == f64::NEG_INFINITY {
        return Err(Error::Contract("importance weights sum to zero".into()));
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut scaled_sum = 0.0;
    let mut scaled_fsum = 0.0;
    for (e, lw) in sample.entries.iter().zip(&log_w) {
        let w = (lw - top).exp();
        scaled_sum += w;
        scaled_fsum += w * f.eval(&e.seq);
    }
    Ok(WeightedEstimate {
        raw: top.exp() * scaled_fsum,
        normalized: scaled_fsum / scaled_sum,
        weight_sum: log_wsum.exp(),
    })
}

/// Unbiased priority-sampling estimate `sum_i (p_i / q_i) f(y_i)`.
pub fn priority_estimate<F: Functional + ?Sized>(f: &F, sample: &SworSample) -> Result<f64> {
    weighted_estimate(f, sample).map(|e| e.raw)
}

/// Priority-sampling estimate divided by the weight sum.
pub fn normalized_estimate<F: Functional + ?Sized>(f: &F, sample: &SworSample) -> Result<f64> {
    weighted_estimate(f, sample).map(|e| e.normalized)
}

/// `sum_i p_i f(y_i)` over a deterministic beam, optionally divided by the
/// beam's probability mass. A lower bound on the expectation when `f >= 0`.
pub fn bs_bound<F: Functional + ?Sized>(f: &F, beam: &[BeamEntry], normalized: bool) -> f64 {
    let mass: f64 = beam.iter().map(|e| e.phi.exp()).sum();
    let value: f64 = beam.iter().map(|e| e.phi.exp() * f.eval(&e.seq)).sum();
    if normalized {
        value / mass
    } else {
        value
    }
}

/// Sums of `p_i` over the beam, used as the weight sum of the bound rows.
pub fn beam_mass(beam: &[BeamEntry]) -> f64 {
    beam.iter().map(|e| e.phi.exp()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Mc,
    SbsRaw,
    SbsNormalized,
    BsBound,
    BsNormalized,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mc,
        Method::SbsRaw,
        Method::SbsNormalized,
        Method::BsBound,
        Method::BsNormalized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::SbsRaw => "sbs_raw",
            Method::SbsNormalized => "sbs_normalized",
            Method::BsBound => "bs_bound",
            Method::BsNormalized => "bs_normalized",
        }
    }

    pub fn is_deterministic(self) -> bool {
        matches!(self, Method::BsBound | Method::BsNormalized)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Domain(format!("unknown method {s:?}")))
    }
}

/// One estimate in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: Method,
    pub k: usize,
    pub temperature: f64,
    pub replicate: usize,
    pub value: f64,
    /// `W(S)` for the sampling-without-replacement methods, the beam mass for
    /// the bound methods, absent for Monte Carlo.
    pub weight_sum: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gumbel::RandomStream;
    use crate::search::{beam_search, stochastic_beam_search_with_threshold};
    use crate::seqmodel::ExplicitTreeModel;
    use crate::reference::hp;

    fn example_tree() -> ExplicitTreeModel {
        ExplicitTreeModel::demo()
    }

    /// `-sum p ln p` over the eight leaf probabilities.
    fn example_entropy() -> f64 {
        [0.05f64, 0.15, 0.15, 0.25, 0.20, 0.10, 0.05, 0.05]
            .iter()
            .map(|p| -p * p.ln())
            .sum()
    }

    fn entry(ids: &[u32], phi: f64) -> BeamEntry {
        BeamEntry {
            seq: Sequence::from_ids(ids),
            phi,
            key: phi,
        }
    }

    #[test]
    fn log_q_examples() {
        assert_eq!(log_q(-3.0, f64::NEG_INFINITY), 0.0);
        assert!((log_q(1.5, 1.5) - (1.0 - (-1.0f64).exp()).ln()).abs() < 1e-15);
        assert!((log_q(0.0, 0.0) + 0.45868).abs() < 1e-5);
        for x in [-20.0, -12.0, -5.0, 0.0, 3.0] {
            let want = hp::log_q(x);
            let got = log_q(x - 2.0, -2.0);
            assert!(((got - want) / want).abs() < 1e-10, "x={x} {got} vs {want}");
        }
    }

    #[test]
    fn log_importance_weight_examples() {
        assert_eq!(log_importance_weight(-1.7, f64::NEG_INFINITY), -1.7);
        assert!((log_importance_weight(-2.0, -2.0) - (-2.0 + 0.458675)).abs() < 1e-6);
        let (phi, kappa) = (-31.0f64, -1.0f64);
        let z = (phi - kappa).exp();
        let series = kappa + z / 2.0 - z * z / 24.0 + z.powi(4) / 2880.0;
        assert_eq!(log_importance_weight(phi, kappa), series);
        let want = hp::log_importance_weight(phi, kappa);
        assert!(((series - want) / want).abs() < 1e-10);
    }

    #[test]
    fn log_importance_weight_matches_extended_precision() {
        for i in 0..=300 {
            let x = -40.0 + 40.0 * i as f64 / 300.0;
            for kappa in [-30.0, -3.0, 0.0, 2.5] {
                let got = log_importance_weight(kappa + x, kappa);
                let want = hp::log_importance_weight(kappa + x, kappa);
                let err = ((got - want) / want).abs();
                assert!(err < 1e-10, "x={x} kappa={kappa}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn log_importance_weight_continuous_at_cutoff() {
        let kappa = -1.25;
        let below = log_importance_weight(kappa + SERIES_CUTOFF - 1e-12, kappa);
        let at = log_importance_weight(kappa + SERIES_CUTOFF, kappa);
        assert!((below - at).abs() < 1e-9, "{below} vs {at}");
    }

    #[test]
    fn weights_positive_and_finite() {
        for phi in [-50.0, -5.0, -0.1] {
            for kappa in [-60.0, -4.0, 3.0] {
                let w = log_importance_weight(phi, kappa).exp();
                assert!(w.is_finite() && w > 0.0, "phi={phi} kappa={kappa}");
            }
        }
    }

    #[test]
    fn mc_examples() {
        let ys = vec![Sequence::from_ids(&[1]), Sequence::from_ids(&[0, 1])];
        assert_eq!(mc_estimate(&|_: &Sequence| 2.5, &ys).unwrap(), 2.5);
        assert_eq!(mc_estimate(&|y: &Sequence| y.len() as f64, &ys[..1]).unwrap(), 1.0);
        assert!(mc_estimate(&|_: &Sequence| 0.0, &[]).is_err());
    }

    #[test]
    fn mc_indicator_on_demo_tree() {
        let m = example_tree();
        let target = Sequence::from_ids(&[0, 1, 1]);
        let mut s = RandomStream::new(5);
        let ys: Vec<Sequence> = (0..100_000)
            .map(|_| crate::search::ancestral_sample(&m, &mut s).unwrap().seq)
            .collect();
        let est = mc_estimate(&|y: &Sequence| f64::from(u8::from(*y == target)), &ys).unwrap();
        assert!((est - 0.25).abs() < 0.006, "{est}");
    }

    #[test]
    fn priority_needs_threshold() {
        let sample = SworSample {
            entries: vec![entry(&[0], -0.5)],
            ..Default::default()
        };
        assert!(matches!(priority_estimate(&|_: &Sequence| 1.0, &sample), Err(Error::Contract(_))));
    }

    #[test]
    fn whole_domain_gives_exact_values() {
        let m = example_tree();
        let f = entropy_functional(&m);
        let exact = example_entropy();
        let mut s = RandomStream::new(9);
        for _ in 0..50 {
            let sample = stochastic_beam_search_with_threshold(&m, 9, &mut s).unwrap();
            assert_eq!(sample.kappa, Some(f64::NEG_INFINITY));
            let est = weighted_estimate(&f, &sample).unwrap();
            assert!((est.raw - exact).abs() < 1e-9);
            assert!((est.normalized - exact).abs() < 1e-9);
            assert!((est.weight_sum - 1.0).abs() < 1e-9);
            assert_eq!(priority_estimate(&|_: &Sequence| 0.0, &sample).unwrap(), 0.0);
        }
    }

    #[test]
    fn normalized_constant_is_exact() {
        let m = example_tree();
        let mut s = RandomStream::new(10);
        for width in 2..=6 {
            for _ in 0..200 {
                let sample = stochastic_beam_search_with_threshold(&m, width, &mut s).unwrap();
                assert_eq!(normalized_estimate(&|_: &Sequence| 1.0, &sample).unwrap(), 1.0);
                let c = normalized_estimate(&|_: &Sequence| 3.7, &sample).unwrap();
                assert!((c - 3.7).abs() < 1e-12);
            }
        }
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn priority_estimate_is_unbiased() {
        let m = example_tree();
        let leaf = Sequence::from_ids(&[1, 0, 0]);
        let entropy = entropy_functional(&m);
        let indicator = |y: &Sequence| f64::from(u8::from(*y == leaf));
        let length_sq = |y: &Sequence| (y.ids().iter().sum::<u32>() as f64).powi(2);
        let exact_len_sq = {
            let p = [0.05, 0.15, 0.15, 0.25, 0.20, 0.10, 0.05, 0.05];
            (0..8).map(|i: u32| p[i as usize] * (i.count_ones() as f64).powi(2)).sum::<f64>()
        };
        let cases: [(&dyn Functional, f64); 3] =
            [(&entropy, example_entropy()), (&indicator, 0.20), (&length_sq, exact_len_sq)];
        for k_keep in [1, 2, 4, 7] {
            let mut s = RandomStream::new(100 + k_keep as u64);
            let samples: Vec<SworSample> = (0..100_000)
                .map(|_| stochastic_beam_search_with_threshold(&m, k_keep + 1, &mut s).unwrap())
                .collect();
            for (f, exact) in cases {
                let ests: Vec<f64> = samples.iter().map(|x| priority_estimate(f, x).unwrap()).collect();
                let (mean, se) = mean_and_se(&ests);
                assert!((mean - exact).abs() < 4.0 * se, "k_keep={k_keep} mean={mean} exact={exact} se={se}");
            }
        }
    }

    #[test]
    fn normalizing_reduces_variance() {
        let m = example_tree();
        let f = entropy_functional(&m);
        let mut s = RandomStream::new(77);
        let (raw, norm): (Vec<f64>, Vec<f64>) = (0..10_000)
            .map(|_| {
                let sample = stochastic_beam_search_with_threshold(&m, 5, &mut s).unwrap();
                let e = weighted_estimate(&f, &sample).unwrap();
                (e.raw, e.normalized)
            })
            .unzip();
        let var = |xs: &[f64]| {
            let (_, se) = mean_and_se(xs);
            se * se * xs.len() as f64
        };
        assert!(var(&norm) < var(&raw), "{} vs {}", var(&norm), var(&raw));
    }

    #[test]
    fn bs_bound_examples() {
        let m = example_tree();
        let beam = beam_search(&m, 2).unwrap();
        let one = |_: &Sequence| 1.0;
        assert!((bs_bound(&one, &beam, false) - 0.45).abs() < 1e-12);
        assert!((bs_bound(&one, &beam, true) - 1.0).abs() < 1e-12);

        let f = entropy_functional(&m);
        let full = beam_search(&m, 8).unwrap();
        assert!((bs_bound(&f, &full, false) - example_entropy()).abs() < 1e-12);
        assert!((bs_bound(&f, &full, true) - example_entropy()).abs() < 1e-12);

        let mut prev = 0.0;
        for k in 1..=8 {
            let v = bs_bound(&f, &beam_search(&m, k).unwrap(), false);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn entropy_functional_examples() {
        let uniform = ExplicitTreeModel::parse("0 1 0 0.5\n0 2 1 0.5\n1 3 0 0.5\n1 4 1 0.5\n2 5 0 0.5\n2 6 1 0.5\n")
            .unwrap();
        let full = beam_search(&uniform, 4).unwrap();
        assert!((bs_bound(&entropy_functional(&uniform), &full, false) - 4f64.ln()).abs() < 1e-12);

        let chain = ExplicitTreeModel::from_edges(&[(0, 1, 0, 1.0), (1, 2, 1, 1.0)]).unwrap();
        assert_eq!(entropy_functional(&chain).eval(&Sequence::from_ids(&[0, 1])), 0.0);

        let m = example_tree();
        let all = beam_search(&m, 8).unwrap();
        let exact = bs_bound(&entropy_functional(&m), &all, false);
        assert!((exact - 1.917_21).abs() < 1e-5, "{exact}");
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("sbs".parse::<Method>().is_err());
    }
}
