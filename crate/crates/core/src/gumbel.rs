//! Gumbel sampling, Gumbel-Max and flat Gumbel-Top-k over explicit
//! categorical distributions.
//!
//! A perturbation pass consumes exactly one uniform per category, in index
//! order, including categories with `phi = -inf`. Masking a category never
//! shifts the noise seen by the others.

use std::cmp::Ordering;

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{domain, Result};
use crate::stable_math::LogValue;

/// Name of the pinned generator, recorded in command output metadata.
pub const GENERATOR: &str = "chacha12";

/// Source of uniforms strictly inside `(0, 1)`.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

impl<U: UniformSource + ?Sized> UniformSource for &mut U {
    fn next_uniform(&mut self) -> f64 {
        (**self).next_uniform()
    }
}

/// Deterministic seeded stream of uniforms; the sole source of randomness.
///
/// Backed by ChaCha12. Substreams use ChaCha's 64-bit stream id, so
/// `(seed, index)` pairs never overlap.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha12Rng,
    seed: u64,
    index: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    /// Independent stream for task `index` under a master `seed`.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self { rng, seed, index }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn index(&self) -> u64 {
        self.index
    }
}

impl UniformSource for RandomStream {
    #[inline]
    fn next_uniform(&mut self) -> f64 {
        // Midpoints of a 2^-53 grid: never 0, never 1.
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }
}

/// Replays a fixed list of uniforms. Panics when exhausted.
#[derive(Debug, Clone)]
pub struct ReplayUniforms {
    values: Vec<f64>,
    pos: usize,
}

impl ReplayUniforms {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, pos: 0 }
    }

    pub fn consumed(&self) -> usize {
        self.pos
    }
}

impl UniformSource for ReplayUniforms {
    fn next_uniform(&mut self) -> f64 {
        let u = self.values[self.pos];
        self.pos += 1;
        u
    }
}

/// `phi - log(-log u)`: the Gumbel(phi) variate for uniform `u`.
#[inline]
pub fn gumbel_from_uniform(u: f64, phi: LogValue) -> f64 {
    if phi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    phi - (-u.ln()).ln()
}

/// Draws one Gumbel(`phi`) variate. Always consumes one uniform, even for
/// `phi = -inf`.
#[inline]
pub fn sample_gumbel<U: UniformSource + ?Sized>(stream: &mut U, phi: LogValue) -> f64 {
    let u = stream.next_uniform();
    gumbel_from_uniform(u, phi)
}

/// A category's log-probability together with its perturbed key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedKey {
    pub index: usize,
    pub phi: LogValue,
    pub key: f64,
}

/// One perturbation pass over `phis`.
pub fn perturb<U: UniformSource + ?Sized>(phis: &[LogValue], stream: &mut U) -> Vec<PerturbedKey> {
    phis.iter()
        .enumerate()
        .map(|(index, &phi)| PerturbedKey {
            index,
            phi,
            key: sample_gumbel(stream, phi),
        })
        .collect()
}

/// Descending by value, ties to the smaller index.
#[inline]
pub(crate) fn desc_then_index(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Indices of the `k` largest values, largest first, ties to the smaller index.
pub fn argtop_k(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return domain(format!("argtop_k: k = {k} exceeds {} values", values.len()));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| desc_then_index((a, values[a]), (b, values[b])));
    idx.truncate(k);
    Ok(idx)
}

/// Samples an index from `softmax(phis)` by perturb-and-argmax.
pub fn gumbel_max<U: UniformSource + ?Sized>(phis: &[LogValue], stream: &mut U) -> Result<usize> {
    if !phis.iter().any(|p| p.is_finite()) {
        return domain("gumbel_max: no category has finite log-probability");
    }
    let keys = perturb(phis, stream);
    let best = keys
        .iter()
        .map(|p| (p.index, p.key))
        .min_by(|&a, &b| desc_then_index(a, b))
        .expect("non-empty");
    Ok(best.0)
}

/// Ordered sample of `k` distinct indices without replacement from
/// `softmax(phis)` (Plackett-Luce order).
pub fn gumbel_top_k<U: UniformSource + ?Sized>(
    phis: &[LogValue],
    k: usize,
    stream: &mut U,
) -> Result<Vec<usize>> {
    let finite = phis.iter().filter(|p| p.is_finite()).count();
    if k > finite {
        return domain(format!(
            "gumbel_top_k: k = {k} exceeds {finite} categories with nonzero probability"
        ));
    }
    let keys: Vec<f64> = perturb(phis, stream).into_iter().map(|p| p.key).collect();
    argtop_k(&keys, k)
}
