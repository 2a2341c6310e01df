//! Truncated Gumbel distribution and conditional sampling of a set of
//! Gumbels whose maximum is pinned to a given value.
//!
//! The conditional sampler draws independent Gumbels, then maps each one
//! through `F^-1_{phi,T}(F_{phi,Z}(g))` where `Z` is their realized maximum.
//! The map is monotone, sends `Z` to `T` and gives the non-argmax children
//! `TruncatedGumbel(phi, T)` marginals. It is evaluated through
//! `log1mexp`/`log1pexp` only; the direct exponential form overflows once
//! keys reach a few hundred in magnitude.

use crate::error::{domain, Result};
use crate::gumbel::{sample_gumbel, UniformSource};
use crate::stable_math::{log1mexp_unchecked, log1pexp, logaddexp, LogValue};

/// Gumbel(`phi`) conditioned on being at most `t_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGumbel {
    pub phi: LogValue,
    pub t_max: f64,
}

impl TruncatedGumbel {
    pub fn new(phi: LogValue, t_max: f64) -> Self {
        Self { phi, t_max }
    }

    /// `F(g) = exp(exp(phi - T) - exp(phi - min(g, T)))`.
    pub fn cdf(&self, g: f64) -> f64 {
        if g >= self.t_max {
            return 1.0;
        }
        if g == f64::NEG_INFINITY {
            return 0.0;
        }
        // exp(phi - T) - exp(phi - g) = -exp(phi - g + log(1 - exp(g - T)))
        (-(self.phi - g + log1mexp_unchecked(g - self.t_max)).exp()).exp()
    }

    /// `F^-1(u) = phi - log(exp(phi - T) - log u)` for `u` in `(0, 1]`.
    pub fn inv_cdf(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return domain(format!("truncated Gumbel inverse CDF needs u in (0, 1], got {u}"));
        }
        let neg_log_u = if u > 0.5 { -(u - 1.0).ln_1p() } else { -u.ln() };
        Ok(self.phi - logaddexp(self.phi - self.t_max, neg_log_u.ln()))
    }
}

/// Maps `keys` to a set of Gumbels with the same ranking whose maximum is
/// exactly `t_max`.
///
/// The first maximal key is set to `t_max` directly. Keys at `-inf` stay
/// there.
pub fn shift_to_max(keys: &[f64], t_max: f64) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return domain("shift_to_max: no keys");
    }
    if !t_max.is_finite() {
        return domain(format!("shift_to_max: t_max must be finite, got {t_max}"));
    }
    if keys.iter().any(|k| k.is_nan()) {
        return domain("shift_to_max: NaN key");
    }
    let (argmax, z) = keys
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, k)| if k > best.1 { (i, k) } else { best });
    if z == f64::NEG_INFINITY {
        return domain("shift_to_max: every key is -inf");
    }
    Ok(keys
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            if i == argmax {
                t_max
            } else if g == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                let v = t_max - g + log1mexp_unchecked(g - z);
                t_max - v.max(0.0) - log1pexp(-v.abs())
            }
        })
        .collect())
}

/// Samples child keys `G_{phi_i}` conditioned on `max_i G_{phi_i} = parent_key`.
///
/// Consumes one uniform per child, in order, including masked children.
pub fn sample_children_conditional<U: UniformSource + ?Sized>(
    stream: &mut U,
    child_phis: &[LogValue],
    parent_key: f64,
) -> Result<Vec<f64>> {
    let keys: Vec<f64> = child_phis.iter().map(|&phi| sample_gumbel(stream, phi)).collect();
    if keys.iter().all(|&k| k == f64::NEG_INFINITY) {
        return domain("sample_children_conditional: every child has zero probability");
    }
    shift_to_max(&keys, parent_key)
}
